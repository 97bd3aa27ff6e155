#pragma once
// The episode protocol: a speaker sees only the six context panels and emits
// a short token message; a listener sees only the message, the two question
// panels, and the eight candidates, and answers. Reward is binary
// correctness for both. Information hiding is enforced by the view types.

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "rgame/forge.hpp"
#include "rgame/rng.hpp"

namespace rgame {

struct ChannelViolation : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ChannelConfig {
    int max_message_length = 4;
    int vocabulary_size = 15;

    // Reserved ids live just past the content range.
    int eos_token() const { return vocabulary_size; }
    int sos_token() const { return vocabulary_size + 1; }
    int alphabet_size() const { return vocabulary_size + 2; }

    void validate() const;
    friend bool operator==(const ChannelConfig&, const ChannelConfig&) = default;
};

// Content tokens only, each in 0..|V|-1, length 1..|M|. The blocked message
// is the one exception: all start tokens, length exactly |M|.
struct Message {
    std::vector<int> tokens;

    std::size_t size() const { return tokens.size(); }
    friend bool operator==(const Message&, const Message&) = default;
};

Message blocked_message(const ChannelConfig& cfg);
bool is_blocked_message(const Message& m, const ChannelConfig& cfg);

// Throws ChannelViolation unless `m` is a well-formed speaker message
// (or the blocked constant).
void validate_message(const Message& m, const ChannelConfig& cfg);

// What the listener actually consumes: the content tokens, then an explicit
// end token when the speaker stopped before |M|.
std::vector<int> wire_tokens(const Message& m, const ChannelConfig& cfg);

enum class EpisodeMode {
    sampled,          // stochastic speaker and listener
    greedy,           // deterministic argmax everywhere
    message_blocked,  // delivered message replaced by the blocked constant
};

struct SpeakerView {
    const std::vector<Panel>& contexts;  // 6 panels
};

struct ListenerView {
    const Message& message;
    const std::vector<Panel>& questions;   // 2 panels
    const std::vector<Panel>& candidates;  // 8 panels
};

class Speaker {
public:
    virtual ~Speaker() = default;
    virtual Message speak(const SpeakerView& view, EpisodeMode mode, Rng& rng) = 0;
};

struct ListenerDecision {
    int prediction = 0;
    std::vector<double> scores;  // one per candidate, sums to 1
};

class Listener {
public:
    virtual ~Listener() = default;
    virtual ListenerDecision listen(const ListenerView& view, EpisodeMode mode,
                                    Rng& rng) = 0;
};

struct EpisodeResult {
    Message message;  // as delivered to the listener
    int prediction = 0;
    int reward = 0;
    std::vector<double> scores;
};

EpisodeResult run_episode(Speaker& speaker, Listener& listener, const Problem& problem,
                          EpisodeMode mode, const ChannelConfig& cfg, Rng& rng);

struct BatchResult {
    double accuracy = 0.0;
    std::vector<EpisodeResult> episodes;
};

BatchResult run_batch(Speaker& speaker, Listener& listener,
                      const std::vector<Problem>& problems, EpisodeMode mode,
                      const ChannelConfig& cfg, Rng& rng);

// One line per episode: problem index, space-joined tokens, prediction,
// target, reward.
void write_episode_log(const std::string& path, const std::vector<Problem>& problems,
                       const std::vector<EpisodeResult>& episodes);

}  // namespace rgame
