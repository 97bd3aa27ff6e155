#pragma once
// Language analysis: distance primitives, Spearman correlation, topographic
// similarity, per-split generalization accuracy, the message-blocked
// overfitting audit, transfer of a frozen language to fresh listeners, and
// the per-rule token table.

#include <map>
#include <string>
#include <vector>

#include "rgame/agents.hpp"
#include "rgame/env.hpp"
#include "rgame/forge.hpp"

namespace rgame {

struct ZeroVariance : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct MappingIncomplete : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Fraction of attribute positions whose rules differ.
double hamming_norm(const RuleVector& a, const RuleVector& b);

// Unit-cost edit distance over token sequences.
int levenshtein(const std::vector<int>& a, const std::vector<int>& b);
int levenshtein(const Message& a, const Message& b);

// One minus the cosine similarity of the flattened, normalized context
// panels; a zero vector is defined to sit at distance 1 from everything.
double panel_cosine(const std::vector<Panel>& a, const std::vector<Panel>& b,
                    int cardinality);

struct SpearmanResult {
    double rho = 0.0;
    double p_value = 1.0;
};

// Rank correlation with average ranks for ties; p from the t approximation.
SpearmanResult spearman(const std::vector<double>& xs, const std::vector<double>& ys);

// Greedy messages per problem, plus the modal message per rule combination.
struct LanguageDump {
    struct Record {
        RuleVector rules;
        std::vector<Panel> contexts;
        Message message;
    };
    std::vector<Record> records;
    std::map<std::string, Message> combo_messages;
};

std::string combo_key(const RuleVector& rv);
LanguageDump dump_language(Speaker& speaker, const std::vector<Problem>& problems,
                           const ChannelConfig& cfg);

enum class TopsimSpace { rule, panel };

struct TopsimRun {
    double rho = 0.0;
    double p_value = 1.0;
    bool valid = true;
};

struct TopsimReport {
    TopsimSpace space = TopsimSpace::rule;
    std::size_t sample_n = 0;
    std::vector<TopsimRun> runs;
    double mean_rho = 0.0;
    double stderr_rho = 0.0;
    std::size_t valid_runs = 0;
};

// Per run: sample `sample_n` records, correlate all pairwise input distances
// (rule Hamming or panel cosine) with message edit distances.
TopsimReport topsim(const LanguageDump& dump, TopsimSpace space, std::size_t sample_n,
                    int runs, int cardinality, Rng& rng);

struct SplitAccuracy {
    std::string split;
    double accuracy = 0.0;
    std::size_t problem_count = 0;
};

// Greedy accuracy per named split, loaded from a generated dataset.
std::vector<SplitAccuracy> generalization_report(Speaker& speaker, Listener& listener,
                                                 const DatasetManifest& manifest,
                                                 const std::string& dir,
                                                 const ChannelConfig& cfg,
                                                 const std::vector<std::string>& splits,
                                                 std::uint64_t seed);

struct BlockedAudit {
    TrainingCurve curve;
    double final_train_accuracy = 0.0;
};

// Trains a fresh listener with the message forced constant; what it still
// reaches is the no-communication ceiling of the problem set.
BlockedAudit message_blocked_audit(const ModelConfig& listener_cfg,
                                   const std::vector<Problem>& train,
                                   const TrainConfig& cfg);

struct EtlArm {
    std::string name;
    TrainingCurve curve;
    double final_accuracy = 0.0;
};

struct EtlReport {
    EtlArm agent;   // the source language mapped by rule combination
    EtlArm rule;    // codebook encoding of the rules, as an upper reference
    EtlArm random;  // the same messages under a shuffled combo mapping
};

// Trains one fresh listener per arm on the target problems with frozen
// messages. Throws MappingIncomplete when the source language is missing a
// combination that occurs in the target set.
EtlReport etl_transfer(const std::map<std::string, Message>& source_language,
                       const std::vector<Problem>& target_problems,
                       const ModelConfig& listener_cfg, const OracleCodebook& rule_codebook,
                       const TrainConfig& cfg);

struct TokenTableRow {
    int attribute = 0;
    std::string rule;
    std::vector<int> argmax_token;  // per position; -1 where no message reaches
    std::size_t support = 0;        // combos covering this (attribute, rule)
};

struct TokenTable {
    std::vector<TokenTableRow> rows;
    std::vector<std::string> absent;  // "(attribute, rule)" pairs with no combo
};

// For each (attribute, rule): the most frequent token per message position
// among combo-level messages carrying that rule on that attribute.
TokenTable token_distribution(const LanguageDump& dump, const RuleRegistry& registry,
                              int attribute_count, const ChannelConfig& cfg);

void write_token_table_csv(const std::string& path, const TokenTable& table);
void write_topsim_csv(const std::string& path, const TopsimReport& rule_space,
                      const TopsimReport& panel_space);

}  // namespace rgame
