#pragma once
// Agents for the game. The oracle pair is the symbolic ground truth:
// a perfectly compositional codebook language plus brute-force rule
// extraction, used for calibration and upper bounds. The neural pair is a
// panel encoder f, a grouped reasoning module g, a gated recurrent message
// model h, and an output projection q, trained with score-function gradients
// in two stages: supervised-style token alignment on a held-out rule set,
// then joint reward-driven training with a fresh h and q.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rgame/autodiff.hpp"
#include "rgame/env.hpp"
#include "rgame/forge.hpp"
#include "rgame/rules.hpp"

namespace rgame {

struct RuleExtractionAmbiguous : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct UndecodableMessage : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct TrainingDiverged : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Token i of a codebook message names the rule on attribute i, by registry
// position. Needs one token per rule and one message slot per attribute.
struct OracleCodebook {
    RuleRegistry registry;
    ChannelConfig channel;

    OracleCodebook(RuleRegistry reg, ChannelConfig cfg);

    Message encode(const RuleVector& rv) const;
    std::optional<RuleVector> decode(const Message& m) const;
    int attribute_count() const { return channel.max_message_length; }
};

// Extracts the per-attribute rule consistent with both context rows and
// encodes it. Throws RuleExtractionAmbiguous when the rows do not pin down
// a single rule (which audited problems guarantee they do).
class OracleSpeaker : public Speaker {
public:
    explicit OracleSpeaker(OracleCodebook codebook) : codebook_(std::move(codebook)) {}

    Message speak(const SpeakerView& view, EpisodeMode mode, Rng& rng) override;
    RuleVector extract_rules(const std::vector<Panel>& contexts) const;

private:
    OracleCodebook codebook_;
};

// Decodes the message, completes each question row under the decoded rule,
// and picks the candidate matching on the most attributes (ties to the
// lowest index). An undecodable message falls back to a uniform guess.
class OracleListener : public Listener {
public:
    explicit OracleListener(OracleCodebook codebook) : codebook_(std::move(codebook)) {}

    ListenerDecision listen(const ListenerView& view, EpisodeMode mode,
                            Rng& rng) override;

private:
    OracleCodebook codebook_;
};

struct ModelConfig {
    int attribute_count = 4;
    int cardinality = 20;    // attribute values are normalized by this
    int groups = 8;          // panel embedding width; one scalar per group
    int experts = 5;         // shared subnetworks applied to every group
    int expert_hidden = 16;  // hidden width inside each expert
    int embed_hidden = 16;   // hidden width of the panel encoder
    int token_embed_dim = 8;
    ChannelConfig channel;

    // Rule embeddings and the recurrent state share this width, so the
    // listener can score candidates by inner product with its final state.
    int rule_embed_dim() const { return groups * experts; }
    void validate() const;
};

// f: one panel of normalized attribute values to a `groups`-wide embedding.
struct PanelEncoderParams {
    ad::Parameter w1, b1, w2, b2;

    PanelEncoderParams() = default;
    PanelEncoderParams(const std::string& prefix, const ModelConfig& cfg, Rng& rng);
    std::vector<ad::Parameter*> params();
};

// g: three panel embeddings to a rule embedding. Group j feeds the j-th
// scalar of each embedding through all experts; expert outputs concatenate.
struct ReasoningParams {
    std::vector<ad::Parameter> w1, b1, w2, b2;  // one tuple per expert

    ReasoningParams() = default;
    ReasoningParams(const std::string& prefix, const ModelConfig& cfg, Rng& rng);
    std::vector<ad::Parameter*> params();
};

// Gated recurrent cell with update and reset gates.
struct GruParams {
    ad::Parameter wz, uz, bz, wr, ur, br, wh, uh, bh;

    GruParams() = default;
    GruParams(const std::string& prefix, int input_dim, int hidden_dim, Rng& rng);
    std::vector<ad::Parameter*> params();
};

struct SpeakerParams {
    ModelConfig cfg;
    PanelEncoderParams f;
    ReasoningParams g;
    ad::Parameter token_embed;  // (|V|+2, token_embed_dim)
    GruParams h;
    ad::Parameter q_w, q_b;  // projects state to |V|+1 logits (content + end)

    SpeakerParams() = default;
    SpeakerParams(const ModelConfig& cfg, Rng& rng);
    std::vector<ad::Parameter*> params();
    std::vector<ad::Parameter*> fg_params();  // carried across stages
    // Replaces the message model and projection with fresh draws, keeping
    // f and g; the channel may change size between stages.
    void reset_message_head(const ChannelConfig& channel, Rng& rng);
};

struct ListenerParams {
    ModelConfig cfg;
    PanelEncoderParams f;
    ReasoningParams g;
    ad::Parameter token_embed;
    GruParams h;
    ad::Parameter h0;

    ListenerParams() = default;
    ListenerParams(const ModelConfig& cfg, Rng& rng);
    std::vector<ad::Parameter*> params();
};

// Forward-graph outputs kept as tape nodes so training can differentiate
// through them; evaluation just reads values.
struct SpeakerRollout {
    Message message;
    std::vector<ad::Var> token_logps;  // every emission, end token included
    std::vector<ad::Var> entropies;    // per-step distribution entropy
};

struct ListenerRollout {
    int prediction = 0;
    std::vector<double> scores;
    ad::Var logp;  // log-probability of the prediction
};

SpeakerRollout speak_graph(ad::Tape& tape, SpeakerParams& sp,
                           const std::vector<Panel>& contexts, EpisodeMode mode,
                           Rng& rng);
ListenerRollout listen_graph(ad::Tape& tape, ListenerParams& lp, const Message& m,
                             const std::vector<Panel>& questions,
                             const std::vector<Panel>& candidates, EpisodeMode mode,
                             Rng& rng);

// Evaluation adapters over the episode interface.
class NeuralSpeaker : public Speaker {
public:
    explicit NeuralSpeaker(SpeakerParams& params) : params_(&params) {}
    Message speak(const SpeakerView& view, EpisodeMode mode, Rng& rng) override;

private:
    SpeakerParams* params_;
};

class NeuralListener : public Listener {
public:
    explicit NeuralListener(ListenerParams& params) : params_(&params) {}
    ListenerDecision listen(const ListenerView& view, EpisodeMode mode,
                            Rng& rng) override;

private:
    ListenerParams* params_;
};

struct TrainConfig {
    int epochs = 50;
    int batch_size = 64;
    ad::AdamWConfig optim;
    double entropy_coef = 0.01;
    bool reward_baseline = false;  // literal score-function estimator when off
    std::uint64_t seed = 1;
};

struct EpochStats {
    int epoch = 0;
    double train_acc = 0.0;     // mean reward over the epoch's episodes
    double reward_mean = 0.0;   // alias kept for the curve format
    double entropy_mean = 0.0;  // mean per-step policy entropy
};

using TrainingCurve = std::vector<EpochStats>;
void write_curve_csv(const std::string& path, const TrainingCurve& curve);

// Running-mean reward baseline; subtracted from the reward when enabled.
class RewardBaseline {
public:
    double value() const { return count_ == 0 ? 0.0 : sum_ / static_cast<double>(count_); }
    void observe(double reward) {
        sum_ += reward;
        ++count_;
    }

private:
    double sum_ = 0.0;
    std::size_t count_ = 0;
};

// Stage 1: per-token alignment against the codebook encoding of each
// problem's rule vector. Only the speaker updates. The returned curve's
// train_acc column is per-token accuracy.
TrainingCurve pretrain_speaker(SpeakerParams& sp, const OracleCodebook& codebook,
                               const std::vector<Problem>& problems,
                               const TrainConfig& cfg);

// Stage 2: joint reward-driven training. `blocked` trains the listener under
// the constant message, skipping speaker updates entirely.
TrainingCurve joint_train(SpeakerParams& sp, ListenerParams& lp,
                          const std::vector<Problem>& problems, const TrainConfig& cfg,
                          bool blocked = false);
TrainingCurve train_listener_blocked(ListenerParams& lp,
                                     const std::vector<Problem>& problems,
                                     const TrainConfig& cfg);

// Greedy-mode accuracy of the neural pair over a problem set.
double evaluate_pair(SpeakerParams& sp, ListenerParams& lp,
                     const std::vector<Problem>& problems, std::uint64_t seed);
double evaluate_listener_blocked(ListenerParams& lp, const std::vector<Problem>& problems,
                                 std::uint64_t seed);

// Listener trained on externally supplied (message, problem) pairs; the core
// of transfer evaluation. Messages are delivered verbatim.
TrainingCurve train_listener_on_messages(ListenerParams& lp,
                                         const std::vector<Problem>& problems,
                                         const std::vector<Message>& messages,
                                         const TrainConfig& cfg);
double evaluate_listener_on_messages(ListenerParams& lp,
                                     const std::vector<Problem>& problems,
                                     const std::vector<Message>& messages,
                                     std::uint64_t seed);

}  // namespace rgame
