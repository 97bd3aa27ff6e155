#include "rgame/env.hpp"

#include <fstream>

namespace rgame {

void ChannelConfig::validate() const {
    if (max_message_length < 1)
        throw std::invalid_argument("channel: max_message_length must be >= 1");
    if (vocabulary_size < 2)
        throw std::invalid_argument("channel: vocabulary_size must be >= 2");
}

Message blocked_message(const ChannelConfig& cfg) {
    Message m;
    m.tokens.assign(static_cast<std::size_t>(cfg.max_message_length), cfg.sos_token());
    return m;
}

bool is_blocked_message(const Message& m, const ChannelConfig& cfg) {
    return m == blocked_message(cfg);
}

void validate_message(const Message& m, const ChannelConfig& cfg) {
    if (is_blocked_message(m, cfg)) return;
    if (m.tokens.empty()) throw ChannelViolation("empty message");
    if (m.tokens.size() > static_cast<std::size_t>(cfg.max_message_length))
        throw ChannelViolation("message length " + std::to_string(m.tokens.size()) +
                               " exceeds limit " + std::to_string(cfg.max_message_length));
    for (int t : m.tokens)
        if (t < 0 || t >= cfg.vocabulary_size)
            throw ChannelViolation("token " + std::to_string(t) +
                                   " outside vocabulary of " +
                                   std::to_string(cfg.vocabulary_size));
}

std::vector<int> wire_tokens(const Message& m, const ChannelConfig& cfg) {
    std::vector<int> out = m.tokens;
    if (out.size() < static_cast<std::size_t>(cfg.max_message_length))
        out.push_back(cfg.eos_token());
    return out;
}

EpisodeResult run_episode(Speaker& speaker, Listener& listener, const Problem& problem,
                          EpisodeMode mode, const ChannelConfig& cfg, Rng& rng) {
    SpeakerView sv{problem.contexts};
    Message m = speaker.speak(sv, mode, rng);
    validate_message(m, cfg);
    if (mode == EpisodeMode::message_blocked) m = blocked_message(cfg);

    ListenerView lv{m, problem.questions, problem.candidates};
    ListenerDecision d = listener.listen(lv, mode, rng);
    if (d.prediction < 0 ||
        d.prediction >= static_cast<int>(problem.candidates.size()))
        throw ChannelViolation("listener prediction out of range");

    EpisodeResult r;
    r.message = std::move(m);
    r.prediction = d.prediction;
    r.reward = d.prediction == problem.target_index ? 1 : 0;
    r.scores = std::move(d.scores);
    return r;
}

BatchResult run_batch(Speaker& speaker, Listener& listener,
                      const std::vector<Problem>& problems, EpisodeMode mode,
                      const ChannelConfig& cfg, Rng& rng) {
    BatchResult out;
    out.episodes.reserve(problems.size());
    std::size_t correct = 0;
    for (const Problem& p : problems) {
        out.episodes.push_back(run_episode(speaker, listener, p, mode, cfg, rng));
        correct += static_cast<std::size_t>(out.episodes.back().reward);
    }
    out.accuracy = problems.empty()
                       ? 0.0
                       : static_cast<double>(correct) / static_cast<double>(problems.size());
    return out;
}

void write_episode_log(const std::string& path, const std::vector<Problem>& problems,
                       const std::vector<EpisodeResult>& episodes) {
    if (problems.size() != episodes.size())
        throw std::invalid_argument("episode log: size mismatch");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open episode log: " + path);
    for (std::size_t i = 0; i < episodes.size(); ++i) {
        out << i << " ";
        const Message& m = episodes[i].message;
        for (std::size_t t = 0; t < m.tokens.size(); ++t)
            out << (t ? "," : "") << m.tokens[t];
        out << " " << episodes[i].prediction << " " << problems[i].target_index << " "
            << episodes[i].reward << "\n";
    }
}

}  // namespace rgame
