#include "rgame/agents.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace rgame {

using ad::Parameter;
using ad::Tape;
using ad::Tensor;
using ad::Var;

OracleCodebook::OracleCodebook(RuleRegistry reg, ChannelConfig cfg)
    : registry(std::move(reg)), channel(cfg) {
    channel.validate();
    if (static_cast<int>(registry.rules.size()) > channel.vocabulary_size)
        throw std::invalid_argument("codebook: registry needs " +
                                    std::to_string(registry.rules.size()) +
                                    " tokens, vocabulary has " +
                                    std::to_string(channel.vocabulary_size));
}

Message OracleCodebook::encode(const RuleVector& rv) const {
    if (static_cast<int>(rv.size()) != channel.max_message_length)
        throw std::invalid_argument("codebook: rule vector length " +
                                    std::to_string(rv.size()) + " vs message slots " +
                                    std::to_string(channel.max_message_length));
    Message m;
    m.tokens.reserve(rv.size());
    for (const Rule& r : rv.rules) {
        const int idx = registry.index_of(r);
        if (idx < 0)
            throw std::invalid_argument("codebook: rule " + display_name(r) +
                                        " not in registry " + registry.name);
        m.tokens.push_back(idx);
    }
    return m;
}

std::optional<RuleVector> OracleCodebook::decode(const Message& m) const {
    if (static_cast<int>(m.tokens.size()) != channel.max_message_length)
        return std::nullopt;
    RuleVector rv;
    rv.rules.reserve(m.tokens.size());
    for (int t : m.tokens) {
        if (t < 0 || t >= static_cast<int>(registry.rules.size())) return std::nullopt;
        rv.rules.push_back(registry.rules[static_cast<std::size_t>(t)]);
    }
    return rv;
}

RuleVector OracleSpeaker::extract_rules(const std::vector<Panel>& contexts) const {
    if (contexts.size() != 6)
        throw std::invalid_argument("oracle speaker: expected 6 context panels");
    const std::size_t k = contexts[0].size();
    RuleVector rv;
    rv.rules.reserve(k);
    for (std::size_t a = 0; a < k; ++a) {
        const Triple row1{contexts[0].values[a], contexts[1].values[a],
                          contexts[2].values[a]};
        const Triple row2{contexts[3].values[a], contexts[4].values[a],
                          contexts[5].values[a]};
        const std::vector<int> m1 = effective_matches(row1, codebook_.registry);
        const std::vector<int> m2 = effective_matches(row2, codebook_.registry);
        std::vector<int> both;
        for (int i : m1)
            if (std::find(m2.begin(), m2.end(), i) != m2.end()) both.push_back(i);
        if (both.size() != 1)
            throw RuleExtractionAmbiguous(
                "attribute " + std::to_string(a) + ": " + std::to_string(both.size()) +
                " rules consistent with both context rows");
        rv.rules.push_back(codebook_.registry.rules[static_cast<std::size_t>(both[0])]);
    }
    return rv;
}

Message OracleSpeaker::speak(const SpeakerView& view, EpisodeMode, Rng&) {
    return codebook_.encode(extract_rules(view.contexts));
}

ListenerDecision OracleListener::listen(const ListenerView& view, EpisodeMode,
                                        Rng& rng) {
    const std::size_t n = view.candidates.size();
    ListenerDecision d;
    d.scores.assign(n, 1.0 / static_cast<double>(n));

    const std::optional<RuleVector> rv = codebook_.decode(view.message);
    if (!rv) {
        // Undecodable (e.g. the blocked constant): fall back to a uniform guess.
        d.prediction = static_cast<int>(rng.uniform_below(n));
        return d;
    }

    const std::size_t k = view.questions[0].size();
    std::vector<std::optional<int>> implied(k);
    for (std::size_t a = 0; a < k; ++a) {
        // A wide domain: out-of-range completions just match no candidate.
        const AttributeDomain wide{static_cast<int>(a), 1 << 20};
        implied[a] = complete_third(
            rv->rules[a],
            Prefix{view.questions[0].values[a], view.questions[1].values[a]}, wide);
    }

    std::vector<int> matches(n, 0);
    int total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t a = 0; a < k; ++a)
            if (implied[a] && view.candidates[i].values[a] == *implied[a]) ++matches[i];
        total += matches[i];
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < n; ++i)
        if (matches[i] > matches[best]) best = i;
    d.prediction = static_cast<int>(best);
    if (total > 0)
        for (std::size_t i = 0; i < n; ++i)
            d.scores[i] = static_cast<double>(matches[i]) / static_cast<double>(total);
    return d;
}

void ModelConfig::validate() const {
    channel.validate();
    if (attribute_count < 1 || cardinality < 2 || groups < 1 || experts < 1 ||
        expert_hidden < 1 || embed_hidden < 1 || token_embed_dim < 1)
        throw std::invalid_argument("model config: all dimensions must be positive");
}

namespace {

Parameter make_param(const std::string& name, std::vector<std::size_t> shape, Rng& rng,
                     double fan_in) {
    Parameter p(name, Tensor(std::move(shape), 0.0));
    for (double& v : p.value.data) v = rng.normal() / std::sqrt(fan_in);
    return p;
}

Parameter make_zero_param(const std::string& name, std::vector<std::size_t> shape) {
    return Parameter(name, Tensor(std::move(shape), 0.0));
}

}  // namespace

PanelEncoderParams::PanelEncoderParams(const std::string& prefix, const ModelConfig& cfg,
                                       Rng& rng) {
    const auto k = static_cast<std::size_t>(cfg.attribute_count);
    const auto hid = static_cast<std::size_t>(cfg.embed_hidden);
    const auto out = static_cast<std::size_t>(cfg.groups);
    w1 = make_param(prefix + ".w1", {hid, k}, rng, static_cast<double>(k));
    b1 = make_zero_param(prefix + ".b1", {hid});
    w2 = make_param(prefix + ".w2", {out, hid}, rng, static_cast<double>(hid));
    b2 = make_zero_param(prefix + ".b2", {out});
}

std::vector<Parameter*> PanelEncoderParams::params() { return {&w1, &b1, &w2, &b2}; }

ReasoningParams::ReasoningParams(const std::string& prefix, const ModelConfig& cfg,
                                 Rng& rng) {
    const auto hid = static_cast<std::size_t>(cfg.expert_hidden);
    for (int e = 0; e < cfg.experts; ++e) {
        const std::string p = prefix + ".e" + std::to_string(e);
        w1.push_back(make_param(p + ".w1", {hid, 3}, rng, 3.0));
        b1.push_back(make_zero_param(p + ".b1", {hid}));
        w2.push_back(make_param(p + ".w2", {1, hid}, rng, static_cast<double>(hid)));
        b2.push_back(make_zero_param(p + ".b2", {1}));
    }
}

std::vector<Parameter*> ReasoningParams::params() {
    std::vector<Parameter*> out;
    for (std::size_t e = 0; e < w1.size(); ++e) {
        out.push_back(&w1[e]);
        out.push_back(&b1[e]);
        out.push_back(&w2[e]);
        out.push_back(&b2[e]);
    }
    return out;
}

GruParams::GruParams(const std::string& prefix, int input_dim, int hidden_dim, Rng& rng) {
    const auto in = static_cast<std::size_t>(input_dim);
    const auto hd = static_cast<std::size_t>(hidden_dim);
    const double fi = static_cast<double>(input_dim);
    const double fh = static_cast<double>(hidden_dim);
    wz = make_param(prefix + ".wz", {hd, in}, rng, fi);
    uz = make_param(prefix + ".uz", {hd, hd}, rng, fh);
    bz = make_zero_param(prefix + ".bz", {hd});
    wr = make_param(prefix + ".wr", {hd, in}, rng, fi);
    ur = make_param(prefix + ".ur", {hd, hd}, rng, fh);
    br = make_zero_param(prefix + ".br", {hd});
    wh = make_param(prefix + ".wh", {hd, in}, rng, fi);
    uh = make_param(prefix + ".uh", {hd, hd}, rng, fh);
    bh = make_zero_param(prefix + ".bh", {hd});
}

std::vector<Parameter*> GruParams::params() {
    return {&wz, &uz, &bz, &wr, &ur, &br, &wh, &uh, &bh};
}

SpeakerParams::SpeakerParams(const ModelConfig& c, Rng& rng) : cfg(c) {
    cfg.validate();
    f = PanelEncoderParams("spk.f", cfg, rng);
    g = ReasoningParams("spk.g", cfg, rng);
    const auto alpha = static_cast<std::size_t>(cfg.channel.alphabet_size());
    const auto te = static_cast<std::size_t>(cfg.token_embed_dim);
    token_embed = make_param("spk.emb", {alpha, te}, rng,
                             static_cast<double>(cfg.token_embed_dim));
    h = GruParams("spk.h", cfg.token_embed_dim, cfg.rule_embed_dim(), rng);
    const auto logits = static_cast<std::size_t>(cfg.channel.vocabulary_size + 1);
    const auto hd = static_cast<std::size_t>(cfg.rule_embed_dim());
    q_w = make_param("spk.q.w", {logits, hd}, rng, static_cast<double>(hd));
    q_b = make_zero_param("spk.q.b", {logits});
}

std::vector<Parameter*> SpeakerParams::params() {
    std::vector<Parameter*> out = f.params();
    for (Parameter* p : g.params()) out.push_back(p);
    out.push_back(&token_embed);
    for (Parameter* p : h.params()) out.push_back(p);
    out.push_back(&q_w);
    out.push_back(&q_b);
    return out;
}

std::vector<Parameter*> SpeakerParams::fg_params() {
    std::vector<Parameter*> out = f.params();
    for (Parameter* p : g.params()) out.push_back(p);
    return out;
}

void SpeakerParams::reset_message_head(const ChannelConfig& channel, Rng& rng) {
    channel.validate();
    cfg.channel = channel;
    const auto alpha = static_cast<std::size_t>(cfg.channel.alphabet_size());
    const auto te = static_cast<std::size_t>(cfg.token_embed_dim);
    token_embed = make_param("spk.emb", {alpha, te}, rng,
                             static_cast<double>(cfg.token_embed_dim));
    h = GruParams("spk.h", cfg.token_embed_dim, cfg.rule_embed_dim(), rng);
    const auto logits = static_cast<std::size_t>(cfg.channel.vocabulary_size + 1);
    const auto hd = static_cast<std::size_t>(cfg.rule_embed_dim());
    q_w = make_param("spk.q.w", {logits, hd}, rng, static_cast<double>(hd));
    q_b = make_zero_param("spk.q.b", {logits});
}

ListenerParams::ListenerParams(const ModelConfig& c, Rng& rng) : cfg(c) {
    cfg.validate();
    f = PanelEncoderParams("lst.f", cfg, rng);
    g = ReasoningParams("lst.g", cfg, rng);
    const auto alpha = static_cast<std::size_t>(cfg.channel.alphabet_size());
    const auto te = static_cast<std::size_t>(cfg.token_embed_dim);
    token_embed = make_param("lst.emb", {alpha, te}, rng,
                             static_cast<double>(cfg.token_embed_dim));
    h = GruParams("lst.h", cfg.token_embed_dim, cfg.rule_embed_dim(), rng);
    h0 = make_zero_param("lst.h0", {static_cast<std::size_t>(cfg.rule_embed_dim())});
}

std::vector<Parameter*> ListenerParams::params() {
    std::vector<Parameter*> out = f.params();
    for (Parameter* p : g.params()) out.push_back(p);
    out.push_back(&token_embed);
    for (Parameter* p : h.params()) out.push_back(p);
    out.push_back(&h0);
    return out;
}

namespace {

struct BoundEncoder {
    Var w1, b1, w2, b2;
};
struct BoundReasoning {
    std::vector<Var> w1, b1, w2, b2;
};
struct BoundGru {
    Var wz, uz, bz, wr, ur, br, wh, uh, bh;
};

BoundEncoder bind(Tape& t, PanelEncoderParams& p) {
    return {t.param(p.w1), t.param(p.b1), t.param(p.w2), t.param(p.b2)};
}

BoundReasoning bind(Tape& t, ReasoningParams& p) {
    BoundReasoning b;
    for (std::size_t e = 0; e < p.w1.size(); ++e) {
        b.w1.push_back(t.param(p.w1[e]));
        b.b1.push_back(t.param(p.b1[e]));
        b.w2.push_back(t.param(p.w2[e]));
        b.b2.push_back(t.param(p.b2[e]));
    }
    return b;
}

BoundGru bind(Tape& t, GruParams& p) {
    return {t.param(p.wz), t.param(p.uz), t.param(p.bz),
            t.param(p.wr), t.param(p.ur), t.param(p.br),
            t.param(p.wh), t.param(p.uh), t.param(p.bh)};
}

Var encode_panel(Tape& t, const BoundEncoder& f, const Panel& panel, int cardinality) {
    std::vector<double> x(panel.size());
    for (std::size_t i = 0; i < panel.size(); ++i)
        x[i] = static_cast<double>(panel.values[i]) / static_cast<double>(cardinality);
    Var in = t.input(Tensor::vector_of(std::move(x)));
    Var hidden = t.tanh(t.add(t.matvec(f.w1, in), f.b1));
    return t.tanh(t.add(t.matvec(f.w2, hidden), f.b2));
}

Var reason(Tape& t, const BoundReasoning& g, Var e1, Var e2, Var e3, int groups) {
    std::vector<Var> parts;
    parts.reserve(static_cast<std::size_t>(groups) * g.w1.size());
    for (int j = 0; j < groups; ++j) {
        const auto js = static_cast<std::size_t>(j);
        Var x = t.concat({t.slice(e1, js, 1), t.slice(e2, js, 1), t.slice(e3, js, 1)});
        for (std::size_t e = 0; e < g.w1.size(); ++e) {
            Var hidden = t.tanh(t.add(t.matvec(g.w1[e], x), g.b1[e]));
            parts.push_back(t.tanh(t.add(t.matvec(g.w2[e], hidden), g.b2[e])));
        }
    }
    return t.concat(parts);
}

Var gru_step(Tape& t, const BoundGru& g, Var state, Var x) {
    Var z = t.sigmoid(t.add(t.add(t.matvec(g.wz, x), t.matvec(g.uz, state)), g.bz));
    Var r = t.sigmoid(t.add(t.add(t.matvec(g.wr, x), t.matvec(g.ur, state)), g.br));
    Var cand =
        t.tanh(t.add(t.add(t.matvec(g.wh, x), t.matvec(g.uh, t.mul(r, state))), g.bh));
    return t.add(state, t.mul(z, t.sub(cand, state)));
}

Var fold_add(Tape& t, const std::vector<Var>& vs) {
    if (vs.empty()) return t.constant(0.0);
    Var acc = vs[0];
    for (std::size_t i = 1; i < vs.size(); ++i) acc = t.add(acc, vs[i]);
    return acc;
}

}  // namespace

SpeakerRollout speak_graph(Tape& tape, SpeakerParams& sp,
                           const std::vector<Panel>& contexts, EpisodeMode mode,
                           Rng& rng) {
    if (contexts.size() != 6)
        throw std::invalid_argument("speaker: expected 6 context panels");
    const ChannelConfig& ch = sp.cfg.channel;
    BoundEncoder f = bind(tape, sp.f);
    BoundReasoning g = bind(tape, sp.g);
    BoundGru h = bind(tape, sp.h);
    Var emb = tape.param(sp.token_embed);
    Var qw = tape.param(sp.q_w);
    Var qb = tape.param(sp.q_b);

    std::vector<Var> e;
    e.reserve(6);
    for (const Panel& p : contexts) e.push_back(encode_panel(tape, f, p, sp.cfg.cardinality));
    Var r1 = reason(tape, g, e[0], e[1], e[2], sp.cfg.groups);
    Var r2 = reason(tape, g, e[3], e[4], e[5], sp.cfg.groups);
    Var state = tape.scale(tape.add(r1, r2), 0.5);

    SpeakerRollout out;
    int prev = ch.sos_token();
    const auto eos_slot = static_cast<std::size_t>(ch.vocabulary_size);
    for (int t = 0; t < ch.max_message_length; ++t) {
        Var x = tape.embedding(emb, static_cast<std::size_t>(prev));
        state = gru_step(tape, h, state, x);
        Var logits = tape.add(tape.matvec(qw, state), qb);
        if (t == 0) {
            // A message has at least one content token, so the end token is
            // unreachable on the first step.
            Tensor mask({static_cast<std::size_t>(ch.vocabulary_size + 1)}, 0.0);
            mask[eos_slot] = -1e30;
            logits = tape.add(logits, tape.input(std::move(mask)));
        }
        std::size_t tok;
        Var logp;
        if (mode == EpisodeMode::sampled) {
            auto [s, l] = tape.sample_categorical(logits, rng);
            tok = s;
            logp = l;
        } else {
            tok = tape.argmax(logits);
            logp = tape.select(tape.log_softmax(logits), tok);
        }
        out.token_logps.push_back(logp);
        out.entropies.push_back(tape.entropy(tape.softmax(logits)));
        if (tok == eos_slot) break;
        out.message.tokens.push_back(static_cast<int>(tok));
        prev = static_cast<int>(tok);
    }
    return out;
}

ListenerRollout listen_graph(Tape& tape, ListenerParams& lp, const Message& m,
                             const std::vector<Panel>& questions,
                             const std::vector<Panel>& candidates, EpisodeMode mode,
                             Rng& rng) {
    if (questions.size() != 2)
        throw std::invalid_argument("listener: expected 2 question panels");
    if (candidates.size() < 2)
        throw std::invalid_argument("listener: expected at least 2 candidates");
    const ChannelConfig& ch = lp.cfg.channel;
    BoundEncoder f = bind(tape, lp.f);
    BoundReasoning g = bind(tape, lp.g);
    BoundGru h = bind(tape, lp.h);
    Var emb = tape.param(lp.token_embed);

    Var state = tape.param(lp.h0);
    for (int tok : wire_tokens(m, ch)) {
        if (tok < 0 || tok >= ch.alphabet_size())
            throw ChannelViolation("listener: token " + std::to_string(tok) +
                                   " outside alphabet");
        state = gru_step(tape, h, state, tape.embedding(emb, static_cast<std::size_t>(tok)));
    }

    Var q1 = encode_panel(tape, f, questions[0], lp.cfg.cardinality);
    Var q2 = encode_panel(tape, f, questions[1], lp.cfg.cardinality);
    std::vector<Var> per_candidate;
    per_candidate.reserve(candidates.size());
    for (const Panel& c : candidates) {
        Var ec = encode_panel(tape, f, c, lp.cfg.cardinality);
        Var r = reason(tape, g, q1, q2, ec, lp.cfg.groups);
        per_candidate.push_back(tape.dot(r, state));
    }
    Var logits = tape.concat(per_candidate);

    ListenerRollout out;
    out.scores = ad::softmax_values(logits.value().data);
    std::size_t pick;
    if (mode == EpisodeMode::sampled) {
        auto [s, l] = tape.sample_categorical(logits, rng);
        pick = s;
        out.logp = l;
    } else {
        pick = tape.argmax(logits);
        out.logp = tape.select(tape.log_softmax(logits), pick);
    }
    out.prediction = static_cast<int>(pick);
    return out;
}

Message NeuralSpeaker::speak(const SpeakerView& view, EpisodeMode mode, Rng& rng) {
    Tape tape;
    const EpisodeMode m =
        mode == EpisodeMode::message_blocked ? EpisodeMode::greedy : mode;
    return speak_graph(tape, *params_, view.contexts, m, rng).message;
}

ListenerDecision NeuralListener::listen(const ListenerView& view, EpisodeMode mode,
                                        Rng& rng) {
    Tape tape;
    const EpisodeMode m =
        mode == EpisodeMode::message_blocked ? EpisodeMode::greedy : mode;
    ListenerRollout r = listen_graph(tape, *params_, view.message, view.questions,
                                     view.candidates, m, rng);
    return {r.prediction, std::move(r.scores)};
}

void write_curve_csv(const std::string& path, const TrainingCurve& curve) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open curve file: " + path);
    out << "epoch,train_acc,reward_mean,entropy_mean\n";
    out << std::setprecision(12);
    for (const EpochStats& s : curve)
        out << s.epoch << "," << s.train_acc << "," << s.reward_mean << ","
            << s.entropy_mean << "\n";
}

namespace {

void check_finite_loss(const Var& loss, int epoch) {
    if (!std::isfinite(loss.value()[0]))
        throw TrainingDiverged("loss became non-finite at epoch " +
                               std::to_string(epoch));
}

std::vector<std::size_t> shuffled_order(std::size_t n, Rng& rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    return order;
}

}  // namespace

TrainingCurve pretrain_speaker(SpeakerParams& sp, const OracleCodebook& codebook,
                               const std::vector<Problem>& problems,
                               const TrainConfig& cfg) {
    if (problems.empty()) throw std::invalid_argument("pretrain: empty problem set");
    if (!(codebook.channel == sp.cfg.channel))
        throw std::invalid_argument("pretrain: codebook and speaker channel differ");
    ad::AdamW opt(sp.params(), cfg.optim);
    Rng rng(derive_seed(cfg.seed, {fnv1a_str("pretrain")}));
    TrainingCurve curve;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const std::vector<std::size_t> order = shuffled_order(problems.size(), rng);
        std::size_t correct_tokens = 0, total_tokens = 0;
        double entropy_sum = 0.0;
        std::size_t entropy_n = 0;

        for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end =
                std::min(order.size(), at + static_cast<std::size_t>(cfg.batch_size));
            Tape tape;
            std::vector<Var> losses;
            for (std::size_t i = at; i < end; ++i) {
                const Problem& pb = problems[order[i]];
                const Message want = codebook.encode(pb.rule_vector);
                SpeakerRollout roll =
                    speak_graph(tape, sp, pb.contexts, EpisodeMode::sampled, rng);
                std::vector<Var> hits;
                for (std::size_t t = 0; t < want.tokens.size(); ++t) {
                    const bool got = t < roll.message.tokens.size() &&
                                     roll.message.tokens[t] == want.tokens[t];
                    correct_tokens += got ? 1 : 0;
                    ++total_tokens;
                    if (got) hits.push_back(roll.token_logps[t]);
                }
                losses.push_back(tape.scale(fold_add(tape, hits), -1.0));
                for (const Var& h : roll.entropies) entropy_sum += h.value()[0];
                entropy_n += roll.entropies.size();
            }
            Var loss =
                tape.scale(fold_add(tape, losses), 1.0 / static_cast<double>(losses.size()));
            check_finite_loss(loss, epoch);
            opt.zero_grad();
            tape.backward(loss);
            opt.step();
        }
        const double acc =
            static_cast<double>(correct_tokens) / static_cast<double>(total_tokens);
        curve.push_back({epoch, acc, acc,
                         entropy_n ? entropy_sum / static_cast<double>(entropy_n) : 0.0});
    }
    return curve;
}

namespace {

// Listener-only reward training; `messages` null means the blocked constant.
TrainingCurve listener_reward_train(ListenerParams& lp,
                                    const std::vector<Problem>& problems,
                                    const std::vector<Message>* messages,
                                    const TrainConfig& cfg, std::uint64_t salt) {
    if (problems.empty()) throw std::invalid_argument("train: empty problem set");
    if (messages && messages->size() != problems.size())
        throw std::invalid_argument("train: message list size mismatch");
    ad::AdamW opt(lp.params(), cfg.optim);
    Rng rng(derive_seed(cfg.seed, {salt}));
    RewardBaseline baseline;
    const Message blocked = blocked_message(lp.cfg.channel);
    TrainingCurve curve;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const std::vector<std::size_t> order = shuffled_order(problems.size(), rng);
        double reward_sum = 0.0;

        for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end =
                std::min(order.size(), at + static_cast<std::size_t>(cfg.batch_size));
            Tape tape;
            std::vector<Var> losses;
            for (std::size_t i = at; i < end; ++i) {
                const std::size_t idx = order[i];
                const Problem& pb = problems[idx];
                const Message& m = messages ? (*messages)[idx] : blocked;
                ListenerRollout roll = listen_graph(tape, lp, m, pb.questions,
                                                    pb.candidates, EpisodeMode::sampled, rng);
                const double reward = roll.prediction == pb.target_index ? 1.0 : 0.0;
                const double adv =
                    reward - (cfg.reward_baseline ? baseline.value() : 0.0);
                if (cfg.reward_baseline) baseline.observe(reward);
                reward_sum += reward;
                losses.push_back(tape.scale(roll.logp, -adv));
            }
            Var loss =
                tape.scale(fold_add(tape, losses), 1.0 / static_cast<double>(losses.size()));
            check_finite_loss(loss, epoch);
            opt.zero_grad();
            tape.backward(loss);
            opt.step();
        }
        const double acc = reward_sum / static_cast<double>(problems.size());
        curve.push_back({epoch, acc, acc, 0.0});
    }
    return curve;
}

}  // namespace

TrainingCurve joint_train(SpeakerParams& sp, ListenerParams& lp,
                          const std::vector<Problem>& problems, const TrainConfig& cfg,
                          bool blocked) {
    if (blocked) return train_listener_blocked(lp, problems, cfg);
    if (problems.empty()) throw std::invalid_argument("train: empty problem set");
    if (!(sp.cfg.channel == lp.cfg.channel))
        throw std::invalid_argument("train: speaker and listener channel differ");
    ad::AdamW spk_opt(sp.params(), cfg.optim);
    ad::AdamW lst_opt(lp.params(), cfg.optim);
    Rng rng(derive_seed(cfg.seed, {fnv1a_str("joint")}));
    RewardBaseline baseline;
    TrainingCurve curve;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const std::vector<std::size_t> order = shuffled_order(problems.size(), rng);
        double reward_sum = 0.0, entropy_sum = 0.0;
        std::size_t entropy_n = 0;

        for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end =
                std::min(order.size(), at + static_cast<std::size_t>(cfg.batch_size));
            Tape tape;
            std::vector<Var> losses;
            for (std::size_t i = at; i < end; ++i) {
                const Problem& pb = problems[order[i]];
                SpeakerRollout sr =
                    speak_graph(tape, sp, pb.contexts, EpisodeMode::sampled, rng);
                ListenerRollout lr =
                    listen_graph(tape, lp, sr.message, pb.questions, pb.candidates,
                                 EpisodeMode::sampled, rng);
                const double reward = lr.prediction == pb.target_index ? 1.0 : 0.0;
                const double adv =
                    reward - (cfg.reward_baseline ? baseline.value() : 0.0);
                if (cfg.reward_baseline) baseline.observe(reward);
                reward_sum += reward;

                Var ep = tape.scale(lr.logp, -adv);
                ep = tape.add(ep, tape.scale(fold_add(tape, sr.token_logps), -adv));
                ep = tape.add(ep,
                              tape.scale(fold_add(tape, sr.entropies), -cfg.entropy_coef));
                losses.push_back(ep);
                for (const Var& h : sr.entropies) entropy_sum += h.value()[0];
                entropy_n += sr.entropies.size();
            }
            Var loss =
                tape.scale(fold_add(tape, losses), 1.0 / static_cast<double>(losses.size()));
            check_finite_loss(loss, epoch);
            spk_opt.zero_grad();
            lst_opt.zero_grad();
            tape.backward(loss);
            spk_opt.step();
            lst_opt.step();
        }
        curve.push_back({epoch, reward_sum / static_cast<double>(problems.size()),
                         reward_sum / static_cast<double>(problems.size()),
                         entropy_n ? entropy_sum / static_cast<double>(entropy_n) : 0.0});
    }
    return curve;
}

TrainingCurve train_listener_blocked(ListenerParams& lp,
                                     const std::vector<Problem>& problems,
                                     const TrainConfig& cfg) {
    return listener_reward_train(lp, problems, nullptr, cfg, fnv1a_str("blocked"));
}

TrainingCurve train_listener_on_messages(ListenerParams& lp,
                                         const std::vector<Problem>& problems,
                                         const std::vector<Message>& messages,
                                         const TrainConfig& cfg) {
    return listener_reward_train(lp, problems, &messages, cfg, fnv1a_str("mapped"));
}

double evaluate_pair(SpeakerParams& sp, ListenerParams& lp,
                     const std::vector<Problem>& problems, std::uint64_t seed) {
    NeuralSpeaker speaker(sp);
    NeuralListener listener(lp);
    Rng rng(seed);
    return run_batch(speaker, listener, problems, EpisodeMode::greedy, sp.cfg.channel, rng)
        .accuracy;
}

double evaluate_listener_blocked(ListenerParams& lp, const std::vector<Problem>& problems,
                                 std::uint64_t seed) {
    const Message blocked = blocked_message(lp.cfg.channel);
    std::vector<Message> msgs(problems.size(), blocked);
    return evaluate_listener_on_messages(lp, problems, msgs, seed);
}

double evaluate_listener_on_messages(ListenerParams& lp,
                                     const std::vector<Problem>& problems,
                                     const std::vector<Message>& messages,
                                     std::uint64_t seed) {
    if (problems.size() != messages.size())
        throw std::invalid_argument("evaluate: message list size mismatch");
    if (problems.empty()) return 0.0;
    Rng rng(seed);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < problems.size(); ++i) {
        Tape tape;
        ListenerRollout r =
            listen_graph(tape, lp, messages[i], problems[i].questions,
                         problems[i].candidates, EpisodeMode::greedy, rng);
        if (r.prediction == problems[i].target_index) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(problems.size());
}

}  // namespace rgame
