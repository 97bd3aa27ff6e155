#pragma once
// Problem generation and dataset assembly: admissible row sampling, the
// rule-based distractor scheme, split construction, auditing, and the
// line-delimited on-disk format.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rgame/rng.hpp"
#include "rgame/rules.hpp"

namespace rgame {

struct GenerationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct AdmissibleSetEmpty : GenerationError {
    using GenerationError::GenerationError;
};
struct RejectionBudgetExceeded : GenerationError {
    using GenerationError::GenerationError;
};
struct DistractSpaceTooSmall : GenerationError {
    using GenerationError::GenerationError;
};
struct ProblemGenerationFailed : GenerationError {
    using GenerationError::GenerationError;
};
struct DatasetError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A full game instance. Context panels 0-2 form row one and 3-5 row two;
// the question panels plus the target candidate form row three.
// candidate_combos is aligned with candidates: the target slot carries
// rule_vector itself, every other slot the distract combo that produced it.
struct Problem {
    std::vector<Panel> contexts;    // 6
    std::vector<Panel> questions;   // 2
    std::vector<Panel> candidates;  // 8
    RuleVector rule_vector;
    int target_index = 0;
    std::vector<RuleVector> candidate_combos;
    std::uint64_t seed = 0;
};

struct GeneratorConfig {
    RuleRegistry row_registry;       // rules the rows must satisfy uniquely
    RuleRegistry distract_registry;  // superset the distract space draws from
    std::vector<AttributeDomain> domains;
    int candidate_count = 8;
    int row_rejection_budget = 1000;
    int problem_retry_budget = 50;

    int attribute_count() const { return static_cast<int>(domains.size()); }
};

class ProblemGenerator {
public:
    explicit ProblemGenerator(GeneratorConfig cfg);

    const GeneratorConfig& config() const { return cfg_; }

    // Uniform draw from the admissible triples of `rule`: satisfies the rule
    // and matches no other registry rule (modulo declared containments).
    Triple sample_row(const Rule& rule, const AttributeDomain& domain, Rng& rng) const;

    // Per Algorithm: the distract space is the cartesian product of
    // prefix-consistent rules per attribute minus the true combo; sampled
    // without replacement, keeping only combos whose implied panel is
    // distinct from the target and from earlier picks.
    std::pair<std::vector<Panel>, std::vector<RuleVector>> generate_distractors(
        const std::vector<Panel>& questions, const RuleVector& rule_vector,
        int count, Rng& rng) const;

    Problem generate_problem(const RuleVector& rule_vector, std::uint64_t seed) const;

    std::size_t admissible_pair_count(const Rule& rule,
                                      const AttributeDomain& domain) const;

private:
    Triple sample_row_once(const Rule& rule, const AttributeDomain& domain,
                           Rng& rng) const;

    GeneratorConfig cfg_;
    // (rule index, cardinality) -> number of admissible (a, b) prefixes.
    std::map<std::pair<int, int>, std::size_t> admissible_counts_;
};

// ---------------------------------------------------------------------------
// Auditing

struct AuditViolation {
    std::string code;  // row_rule | target_unique | distract_combo | duplicate_candidate | shape
    std::string detail;
};

struct AuditReport {
    std::vector<AuditViolation> violations;
    bool ok() const { return violations.empty(); }
};

// Brute-force re-derivation of every structural guarantee, using only the
// rule predicates (never generator state).
AuditReport audit_problem(const Problem& problem, const RuleRegistry& row_registry,
                          const RuleRegistry& distract_registry,
                          const std::vector<AttributeDomain>& domains);

// Replaces the rule-based distractors with perturbations of the target panel
// (the candidate scheme of earlier matrix datasets). The recorded combos are
// left untouched, so these problems deliberately fail the audit and give the
// memorization baseline its shortcut.
Problem with_perturbation_candidates(const Problem& problem,
                                     const std::vector<AttributeDomain>& domains,
                                     Rng& rng);

// ---------------------------------------------------------------------------
// Datasets and manifests

struct SplitInfo {
    std::string name;
    std::string file;                 // relative to the manifest directory
    std::vector<RuleVector> combos;   // row-registry combos covered
    int problems_per_combo = 0;       // 0 when instances are round-robin
    std::size_t problem_count = 0;
    std::uint64_t checksum = 0;       // FNV-1a of the file bytes
};

struct DatasetManifest {
    int format_version = 1;
    std::string tool_version;
    std::uint64_t seed = 0;
    int attribute_count = 0;
    int cardinality = 0;
    std::vector<std::string> attributes;
    RuleRegistry row_registry;
    RuleRegistry distract_registry;
    std::vector<SplitInfo> splits;

    const SplitInfo& split(const std::string& name) const;
    bool has_split(const std::string& name) const;
};

// Every rule vector over the registry (mixed-radix enumeration, first
// attribute slowest). 1-based rule numbers map to registry positions.
std::vector<RuleVector> all_rule_vectors(const RuleRegistry& reg, int attribute_count);

int default_worker_count();

// Deterministic parallel generation: job seeds are derived from
// (dataset seed, split salt, combo index, instance index) so the output is
// identical for any worker count.
std::vector<Problem> generate_split_problems(const ProblemGenerator& gen,
                                             const std::vector<RuleVector>& combos,
                                             int problems_per_combo,
                                             std::uint64_t dataset_seed,
                                             const std::string& split_name,
                                             int workers);

// Main dataset: every joint combo, `problems_per_combo` problems each,
// first half into train, second half into test.
DatasetManifest build_main_dataset(const GeneratorConfig& cfg, int problems_per_combo,
                                   std::uint64_t seed,
                                   const std::filesystem::path& outdir,
                                   int workers = 1);

// The four-level generalization layout (requires 4 attributes and an 8-rule
// row registry): rule No.8 held out entirely, per-attribute exclusions for
// level 1, 300 combos reserved per family for the interpolation split.
DatasetManifest build_generalization_splits(const GeneratorConfig& cfg,
                                            int problems_per_combo, std::uint64_t seed,
                                            const std::filesystem::path& outdir,
                                            int workers = 1);

// `count` problems over the held-out registry, combos assigned round-robin.
DatasetManifest build_pretrain_set(const GeneratorConfig& cfg, int count,
                                   std::uint64_t seed,
                                   const std::filesystem::path& outdir,
                                   int workers = 1);

// On-disk round trip. Files are UTF-8 JSON lines, one problem per line;
// the manifest is a single JSON document next to them.
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& dir);
DatasetManifest read_manifest(const std::filesystem::path& dir);
std::uint64_t write_problems_file(const std::vector<Problem>& problems,
                                  const DatasetManifest& manifest,
                                  const std::filesystem::path& path);
std::vector<Problem> load_split(const DatasetManifest& manifest,
                                const std::filesystem::path& dir,
                                const std::string& split_name);

std::string problem_to_line(const Problem& problem, const DatasetManifest& manifest);
Problem problem_from_line(const std::string& line, const DatasetManifest& manifest);

}  // namespace rgame
