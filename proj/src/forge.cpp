#include "rgame/forge.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "rgame/version.hpp"

namespace rgame {

using ordered_json = nlohmann::ordered_json;

namespace {

std::string combo_to_string(const RuleVector& rv) {
    std::string s = "(";
    for (std::size_t i = 0; i < rv.rules.size(); ++i) {
        if (i) s += ",";
        s += display_name(rv.rules[i]);
    }
    return s + ")";
}

std::uint64_t name_salt(const std::string& name) {
    return fnv1a_str(name);
}

}  // namespace

ProblemGenerator::ProblemGenerator(GeneratorConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.domains.empty()) throw std::invalid_argument("no attribute domains");
    if (cfg_.candidate_count < 2) throw std::invalid_argument("candidate_count < 2");
    for (const Rule& r : cfg_.row_registry.rules)
        if (!cfg_.distract_registry.contains(r))
            throw std::invalid_argument("distract registry must cover row registry");
    // Admissible prefix counts per (rule, cardinality), enumerated once so
    // structural emptiness is told apart from rejection bad luck.
    for (const AttributeDomain& dom : cfg_.domains) {
        for (std::size_t ri = 0; ri < cfg_.row_registry.rules.size(); ++ri) {
            const auto key = std::make_pair(static_cast<int>(ri), dom.cardinality);
            if (admissible_counts_.count(key)) continue;
            const Rule& rule = cfg_.row_registry.rules[ri];
            std::size_t count = 0;
            for (int a = 1; a <= dom.cardinality; ++a)
                for (int b = 1; b <= dom.cardinality; ++b) {
                    const auto c = complete_third(rule, {a, b}, dom);
                    if (!c) continue;
                    if (unique_effective_match({a, b, *c}, cfg_.row_registry) == rule)
                        ++count;
                }
            admissible_counts_[key] = count;
        }
    }
}

std::size_t ProblemGenerator::admissible_pair_count(const Rule& rule,
                                                    const AttributeDomain& domain) const {
    const int ri = cfg_.row_registry.index_of(rule);
    if (ri < 0) throw std::invalid_argument("rule not in row registry");
    return admissible_counts_.at({ri, domain.cardinality});
}

Triple ProblemGenerator::sample_row_once(const Rule& rule, const AttributeDomain& domain,
                                         Rng& rng) const {
    const int a = rng.uniform_int(1, domain.cardinality);
    const int b = rng.uniform_int(1, domain.cardinality);
    const auto c = complete_third(rule, {a, b}, domain);
    if (!c) return {0, 0, 0};
    const Triple t{a, b, *c};
    if (unique_effective_match(t, cfg_.row_registry) != rule) return {0, 0, 0};
    return t;
}

Triple ProblemGenerator::sample_row(const Rule& rule, const AttributeDomain& domain,
                                    Rng& rng) const {
    if (admissible_pair_count(rule, domain) == 0)
        throw AdmissibleSetEmpty("no admissible triple for rule " + display_name(rule) +
                                 " at N=" + std::to_string(domain.cardinality));
    for (int attempt = 0; attempt < cfg_.row_rejection_budget; ++attempt) {
        const Triple t = sample_row_once(rule, domain, rng);
        if (t[0] != 0) return t;
    }
    throw RejectionBudgetExceeded("row sampling for rule " + display_name(rule) +
                                  " exceeded " + std::to_string(cfg_.row_rejection_budget) +
                                  " attempts");
}

std::pair<std::vector<Panel>, std::vector<RuleVector>>
ProblemGenerator::generate_distractors(const std::vector<Panel>& questions,
                                       const RuleVector& rule_vector, int count,
                                       Rng& rng) const {
    const int k = cfg_.attribute_count();
    const auto& reg = cfg_.distract_registry;

    // Prefix-consistent rules and their completions, per attribute.
    std::vector<std::vector<int>> possible(static_cast<std::size_t>(k));
    std::vector<std::vector<int>> completion(static_cast<std::size_t>(k));
    std::vector<int> true_pos(static_cast<std::size_t>(k), -1);
    std::vector<int> target(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
        const Prefix prefix{questions[0].values[static_cast<std::size_t>(i)],
                            questions[1].values[static_cast<std::size_t>(i)]};
        for (std::size_t ri = 0; ri < reg.rules.size(); ++ri) {
            const auto c = complete_third(reg.rules[ri], prefix,
                                          cfg_.domains[static_cast<std::size_t>(i)]);
            if (!c) continue;
            if (reg.rules[ri] == rule_vector.rules[static_cast<std::size_t>(i)]) {
                true_pos[static_cast<std::size_t>(i)] =
                    static_cast<int>(possible[static_cast<std::size_t>(i)].size());
                target[static_cast<std::size_t>(i)] = *c;
            }
            possible[static_cast<std::size_t>(i)].push_back(static_cast<int>(ri));
            completion[static_cast<std::size_t>(i)].push_back(*c);
        }
        if (true_pos[static_cast<std::size_t>(i)] < 0)
            throw DistractSpaceTooSmall("questions inconsistent with the true rule");
    }

    std::size_t space = 1;
    for (int i = 0; i < k; ++i) space *= possible[static_cast<std::size_t>(i)].size();

    // Index of the true combo in the mixed-radix product space.
    std::size_t true_index = 0;
    for (int i = 0; i < k; ++i)
        true_index = true_index * possible[static_cast<std::size_t>(i)].size() +
                     static_cast<std::size_t>(true_pos[static_cast<std::size_t>(i)]);

    // Uniform draws without replacement via partial Fisher-Yates.
    std::vector<std::uint32_t> order(space);
    for (std::size_t i = 0; i < space; ++i) order[i] = static_cast<std::uint32_t>(i);

    std::vector<Panel> panels;
    std::vector<RuleVector> combos;
    std::vector<int> digits(static_cast<std::size_t>(k));
    for (std::size_t drawn = 0; drawn < space && panels.size() < static_cast<std::size_t>(count); ++drawn) {
        const std::size_t j = drawn + rng.uniform_below(space - drawn);
        std::swap(order[drawn], order[j]);
        std::size_t idx = order[drawn];
        if (idx == true_index) continue;
        for (int i = k - 1; i >= 0; --i) {
            const std::size_t base = possible[static_cast<std::size_t>(i)].size();
            digits[static_cast<std::size_t>(i)] = static_cast<int>(idx % base);
            idx /= base;
        }
        Panel panel;
        panel.values.resize(static_cast<std::size_t>(k));
        for (int i = 0; i < k; ++i)
            panel.values[static_cast<std::size_t>(i)] =
                completion[static_cast<std::size_t>(i)]
                          [static_cast<std::size_t>(digits[static_cast<std::size_t>(i)])];
        if (panel.values == target) continue;
        if (std::find(panels.begin(), panels.end(), panel) != panels.end()) continue;
        RuleVector combo;
        combo.rules.resize(static_cast<std::size_t>(k));
        for (int i = 0; i < k; ++i)
            combo.rules[static_cast<std::size_t>(i)] =
                reg.rules[static_cast<std::size_t>(
                    possible[static_cast<std::size_t>(i)]
                            [static_cast<std::size_t>(digits[static_cast<std::size_t>(i)])])];
        panels.push_back(std::move(panel));
        combos.push_back(std::move(combo));
    }
    if (panels.size() < static_cast<std::size_t>(count))
        throw DistractSpaceTooSmall("only " + std::to_string(panels.size()) + " of " +
                                    std::to_string(count) + " distinct distractors available");
    return {std::move(panels), std::move(combos)};
}

Problem ProblemGenerator::generate_problem(const RuleVector& rule_vector,
                                           std::uint64_t seed) const {
    const int k = cfg_.attribute_count();
    if (static_cast<int>(rule_vector.size()) != k)
        throw std::invalid_argument("rule vector length mismatch");
    for (const Rule& r : rule_vector.rules)
        if (!cfg_.row_registry.contains(r))
            throw std::invalid_argument("rule vector outside the row registry");

    for (int attempt = 0; attempt < cfg_.problem_retry_budget; ++attempt) {
        Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(attempt)}));
        try {
            std::vector<Triple> rows1(static_cast<std::size_t>(k));
            std::vector<Triple> rows2(static_cast<std::size_t>(k));
            std::vector<Triple> rows3(static_cast<std::size_t>(k));
            for (int i = 0; i < k; ++i) {
                const auto& dom = cfg_.domains[static_cast<std::size_t>(i)];
                const Rule& rule = rule_vector.rules[static_cast<std::size_t>(i)];
                rows1[static_cast<std::size_t>(i)] = sample_row(rule, dom, rng);
                rows2[static_cast<std::size_t>(i)] = sample_row(rule, dom, rng);
                rows3[static_cast<std::size_t>(i)] = sample_row(rule, dom, rng);
            }

            Problem p;
            p.rule_vector = rule_vector;
            p.seed = seed;
            p.contexts.assign(6, Panel{std::vector<int>(static_cast<std::size_t>(k))});
            p.questions.assign(2, Panel{std::vector<int>(static_cast<std::size_t>(k))});
            Panel target{std::vector<int>(static_cast<std::size_t>(k))};
            for (int i = 0; i < k; ++i) {
                const auto si = static_cast<std::size_t>(i);
                for (int col = 0; col < 3; ++col) {
                    p.contexts[static_cast<std::size_t>(col)].values[si] =
                        rows1[si][static_cast<std::size_t>(col)];
                    p.contexts[static_cast<std::size_t>(3 + col)].values[si] =
                        rows2[si][static_cast<std::size_t>(col)];
                }
                p.questions[0].values[si] = rows3[si][0];
                p.questions[1].values[si] = rows3[si][1];
                target.values[si] = rows3[si][2];
            }

            auto [dpanels, dcombos] =
                generate_distractors(p.questions, rule_vector, cfg_.candidate_count - 1, rng);

            std::vector<std::size_t> slots(static_cast<std::size_t>(cfg_.candidate_count));
            for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = i;  // 0 = target
            rng.shuffle(slots);
            p.candidates.resize(static_cast<std::size_t>(cfg_.candidate_count));
            p.candidate_combos.resize(static_cast<std::size_t>(cfg_.candidate_count));
            for (std::size_t pos = 0; pos < slots.size(); ++pos) {
                if (slots[pos] == 0) {
                    p.candidates[pos] = target;
                    p.candidate_combos[pos] = rule_vector;
                    p.target_index = static_cast<int>(pos);
                } else {
                    p.candidates[pos] = dpanels[slots[pos] - 1];
                    p.candidate_combos[pos] = dcombos[slots[pos] - 1];
                }
            }
            return p;
        } catch (const RejectionBudgetExceeded&) {
        } catch (const DistractSpaceTooSmall&) {
        }
    }
    throw ProblemGenerationFailed("could not generate a problem for combo " +
                                  combo_to_string(rule_vector) + " within " +
                                  std::to_string(cfg_.problem_retry_budget) + " retries");
}

// ---------------------------------------------------------------------------
// Auditing

AuditReport audit_problem(const Problem& problem, const RuleRegistry& row_registry,
                          const RuleRegistry& distract_registry,
                          const std::vector<AttributeDomain>& domains) {
    AuditReport report;
    auto violation = [&](const std::string& code, const std::string& detail) {
        report.violations.push_back({code, detail});
    };

    const int k = static_cast<int>(domains.size());
    if (problem.contexts.size() != 6 || problem.questions.size() != 2 ||
        problem.candidates.size() != problem.candidate_combos.size() ||
        problem.candidates.empty() ||
        static_cast<int>(problem.rule_vector.size()) != k) {
        violation("shape", "panel or combo counts are inconsistent");
        return report;
    }
    const int n = static_cast<int>(problem.candidates.size());
    if (problem.target_index < 0 || problem.target_index >= n) {
        violation("shape", "target index out of range");
        return report;
    }
    auto in_domain = [&](const Panel& panel) {
        if (static_cast<int>(panel.size()) != k) return false;
        for (int i = 0; i < k; ++i)
            if (!domains[static_cast<std::size_t>(i)].contains(
                    panel.values[static_cast<std::size_t>(i)]))
                return false;
        return true;
    };
    for (const auto& group : {problem.contexts, problem.questions, problem.candidates})
        for (const Panel& panel : group)
            if (!in_domain(panel)) {
                violation("shape", "panel value outside its attribute domain");
                return report;
            }

    // (a) every row triple identifies its intended rule.
    for (int i = 0; i < k; ++i) {
        const auto si = static_cast<std::size_t>(i);
        const Rule& intended = problem.rule_vector.rules[si];
        const Triple row1{problem.contexts[0].values[si], problem.contexts[1].values[si],
                          problem.contexts[2].values[si]};
        const Triple row2{problem.contexts[3].values[si], problem.contexts[4].values[si],
                          problem.contexts[5].values[si]};
        const Triple row3{problem.questions[0].values[si], problem.questions[1].values[si],
                          problem.candidates[static_cast<std::size_t>(problem.target_index)]
                              .values[si]};
        int row_no = 1;
        for (const Triple& row : {row1, row2, row3}) {
            if (unique_effective_match(row, row_registry) != intended)
                violation("row_rule", "attribute " + std::to_string(i) + " row " +
                                          std::to_string(row_no) +
                                          " does not uniquely match " +
                                          display_name(intended));
            ++row_no;
        }
    }

    // (b) exactly one candidate completes the rule vector.
    int completing = 0;
    int completing_index = -1;
    for (int cand = 0; cand < n; ++cand) {
        bool all = true;
        for (int i = 0; i < k && all; ++i) {
            const auto si = static_cast<std::size_t>(i);
            const Prefix prefix{problem.questions[0].values[si],
                                problem.questions[1].values[si]};
            const auto c = complete_third(problem.rule_vector.rules[si], prefix,
                                          domains[si]);
            all = c && *c == problem.candidates[static_cast<std::size_t>(cand)].values[si];
        }
        if (all) {
            ++completing;
            completing_index = cand;
        }
    }
    if (completing != 1)
        violation("target_unique",
                  std::to_string(completing) + " candidates complete the rule vector");
    else if (completing_index != problem.target_index)
        violation("target_unique", "completing candidate is not the recorded target");

    // (c) every distractor is produced by its recorded distract combo.
    for (int cand = 0; cand < n; ++cand) {
        if (cand == problem.target_index) continue;
        const auto sc = static_cast<std::size_t>(cand);
        const RuleVector& combo = problem.candidate_combos[sc];
        if (static_cast<int>(combo.size()) != k) {
            violation("distract_combo", "combo length mismatch at candidate " +
                                            std::to_string(cand));
            continue;
        }
        if (combo == problem.rule_vector) {
            violation("distract_combo", "candidate " + std::to_string(cand) +
                                            " records the true rule vector");
            continue;
        }
        for (int i = 0; i < k; ++i) {
            const auto si = static_cast<std::size_t>(i);
            if (!distract_registry.contains(combo.rules[si])) {
                violation("distract_combo", "candidate " + std::to_string(cand) +
                                                " uses a rule outside the registry");
                continue;
            }
            const Prefix prefix{problem.questions[0].values[si],
                                problem.questions[1].values[si]};
            const auto c = complete_third(combo.rules[si], prefix, domains[si]);
            if (!c || *c != problem.candidates[sc].values[si])
                violation("distract_combo",
                          "candidate " + std::to_string(cand) + " attribute " +
                              std::to_string(i) + " is not implied by its combo");
        }
    }

    // (d) candidates pairwise distinct.
    for (int a = 0; a < n; ++a)
        for (int b = a + 1; b < n; ++b)
            if (problem.candidates[static_cast<std::size_t>(a)] ==
                problem.candidates[static_cast<std::size_t>(b)])
                violation("duplicate_candidate", "candidates " + std::to_string(a) +
                                                     " and " + std::to_string(b) +
                                                     " are identical");
    return report;
}

Problem with_perturbation_candidates(const Problem& problem,
                                     const std::vector<AttributeDomain>& domains,
                                     Rng& rng) {
    Problem out = problem;
    const int k = static_cast<int>(domains.size());
    const Panel& target = problem.candidates[static_cast<std::size_t>(problem.target_index)];
    std::vector<Panel> seen{target};
    for (std::size_t cand = 0; cand < out.candidates.size(); ++cand) {
        if (static_cast<int>(cand) == problem.target_index) continue;
        for (;;) {
            Panel p = target;
            const int flips = rng.uniform_int(1, k);
            std::vector<std::size_t> attrs(static_cast<std::size_t>(k));
            for (std::size_t i = 0; i < attrs.size(); ++i) attrs[i] = i;
            rng.shuffle(attrs);
            for (int f = 0; f < flips; ++f) {
                const std::size_t i = attrs[static_cast<std::size_t>(f)];
                const int n = domains[i].cardinality;
                int v = rng.uniform_int(1, n - 1);
                if (v >= p.values[i]) ++v;  // any value except the current one
                p.values[i] = v;
            }
            if (std::find(seen.begin(), seen.end(), p) == seen.end()) {
                seen.push_back(p);
                out.candidates[cand] = p;
                break;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dataset assembly

std::vector<RuleVector> all_rule_vectors(const RuleRegistry& reg, int attribute_count) {
    const std::size_t base = reg.rules.size();
    std::size_t total = 1;
    for (int i = 0; i < attribute_count; ++i) total *= base;
    std::vector<RuleVector> out;
    out.reserve(total);
    for (std::size_t idx = 0; idx < total; ++idx) {
        RuleVector rv;
        rv.rules.resize(static_cast<std::size_t>(attribute_count));
        std::size_t rest = idx;
        for (int i = attribute_count - 1; i >= 0; --i) {
            rv.rules[static_cast<std::size_t>(i)] = reg.rules[rest % base];
            rest /= base;
        }
        out.push_back(std::move(rv));
    }
    return out;
}

int default_worker_count() {
    if (const char* env = std::getenv("RGAME_WORKERS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

namespace {

// Runs jobs[i] = (combo index, instance index, seed) across workers; output
// order is fixed by job index, so worker count never changes the result.
struct GenJob {
    std::size_t combo_index;
    std::uint64_t seed;
};

std::vector<Problem> run_jobs(const ProblemGenerator& gen,
                              const std::vector<RuleVector>& combos,
                              const std::vector<GenJob>& jobs, int workers) {
    std::vector<Problem> out(jobs.size());
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr first_error;
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= jobs.size()) return;
            try {
                out[i] = gen.generate_problem(combos[jobs[i].combo_index], jobs[i].seed);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (first_error) std::rethrow_exception(first_error);
    return out;
}

}  // namespace

std::vector<Problem> generate_split_problems(const ProblemGenerator& gen,
                                             const std::vector<RuleVector>& combos,
                                             int problems_per_combo,
                                             std::uint64_t dataset_seed,
                                             const std::string& split_name, int workers) {
    const std::uint64_t salt = name_salt(split_name);
    std::vector<GenJob> jobs;
    jobs.reserve(combos.size() * static_cast<std::size_t>(problems_per_combo));
    for (std::size_t c = 0; c < combos.size(); ++c)
        for (int inst = 0; inst < problems_per_combo; ++inst)
            jobs.push_back({c, derive_seed(dataset_seed,
                                           {salt, c, static_cast<std::uint64_t>(inst)})});
    return run_jobs(gen, combos, jobs, workers);
}

namespace {

DatasetManifest make_manifest(const GeneratorConfig& cfg, std::uint64_t seed) {
    DatasetManifest m;
    m.format_version = kDatasetFormatVersion;
    m.tool_version = kToolVersion;
    m.seed = seed;
    m.attribute_count = cfg.attribute_count();
    m.cardinality = cfg.domains.front().cardinality;
    m.attributes = attribute_names(m.attribute_count);
    m.row_registry = cfg.row_registry;
    m.distract_registry = cfg.distract_registry;
    return m;
}

void add_split(DatasetManifest& manifest, const std::filesystem::path& outdir,
               const std::string& name, const std::vector<RuleVector>& combos,
               int problems_per_combo, const std::vector<Problem>& problems) {
    SplitInfo info;
    info.name = name;
    info.file = name + ".jsonl";
    info.combos = combos;
    info.problems_per_combo = problems_per_combo;
    info.problem_count = problems.size();
    info.checksum = write_problems_file(problems, manifest, outdir / info.file);
    manifest.splits.push_back(std::move(info));
}

}  // namespace

DatasetManifest build_main_dataset(const GeneratorConfig& cfg, int problems_per_combo,
                                   std::uint64_t seed,
                                   const std::filesystem::path& outdir, int workers) {
    if (problems_per_combo < 2 || problems_per_combo % 2 != 0)
        throw DatasetError("problems_per_combo must be even (half train, half test)");
    std::filesystem::create_directories(outdir);
    DatasetManifest manifest = make_manifest(cfg, seed);

    const ProblemGenerator gen(cfg);
    const auto combos = all_rule_vectors(cfg.row_registry, cfg.attribute_count());
    const auto problems =
        generate_split_problems(gen, combos, problems_per_combo, seed, "main", workers);

    const int half = problems_per_combo / 2;
    std::vector<Problem> train, test;
    train.reserve(problems.size() / 2);
    test.reserve(problems.size() / 2);
    for (std::size_t i = 0; i < problems.size(); ++i) {
        if (static_cast<int>(i % static_cast<std::size_t>(problems_per_combo)) < half)
            train.push_back(problems[i]);
        else
            test.push_back(problems[i]);
    }
    add_split(manifest, outdir, "train", combos, half, train);
    add_split(manifest, outdir, "test", combos, half, test);
    write_manifest(manifest, outdir);
    return manifest;
}

DatasetManifest build_generalization_splits(const GeneratorConfig& cfg,
                                            int problems_per_combo, std::uint64_t seed,
                                            const std::filesystem::path& outdir,
                                            int workers) {
    const int k = cfg.attribute_count();
    const std::size_t rule_count = cfg.row_registry.rules.size();
    if (k != 4 || rule_count != 8)
        throw DatasetError("the generalization layout requires 4 attributes and 8 rules");
    std::filesystem::create_directories(outdir);
    DatasetManifest manifest = make_manifest(cfg, seed);
    const ProblemGenerator gen(cfg);

    // Rules No.1..7 are the seen family, No.8 is held out everywhere.
    RuleRegistry seen = cfg.row_registry;
    seen.rules.pop_back();
    const auto seen_combos = all_rule_vectors(seen, k);  // 2401

    const int reserve_count = 300;
    std::vector<std::size_t> order(seen_combos.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    {
        Rng rng(derive_seed(seed, {name_salt("select_inpo")}));
        rng.shuffle(order);
    }
    std::vector<RuleVector> inpo_combos, train_combos;
    for (std::size_t i = 0; i < order.size(); ++i)
        (i < static_cast<std::size_t>(reserve_count) ? inpo_combos : train_combos)
            .push_back(seen_combos[order[i]]);
    std::sort(train_combos.begin(), train_combos.end(),
              [&](const RuleVector& a, const RuleVector& b) {
                  for (std::size_t i = 0; i < a.rules.size(); ++i) {
                      const int ia = cfg.row_registry.index_of(a.rules[i]);
                      const int ib = cfg.row_registry.index_of(b.rules[i]);
                      if (ia != ib) return ia < ib;
                  }
                  return false;
              });

    // Combos containing the held-out rule on at least one attribute.
    const Rule held_out = cfg.row_registry.rules.back();
    std::vector<RuleVector> l2_combos;
    for (const RuleVector& rv : all_rule_vectors(cfg.row_registry, k))
        if (std::find(rv.rules.begin(), rv.rules.end(), held_out) != rv.rules.end())
            l2_combos.push_back(rv);  // 1695

    // Level-1 exclusions: rule No.6 on attribute 1, No.3 on attribute 2,
    // No.4 on attribute 3, No.8 on attribute 4 (1-based numbering).
    const std::vector<int> excluded_idx{5, 2, 3, 7};
    std::vector<RuleVector> l1_family, l1_test;
    for (const RuleVector& rv : all_rule_vectors(cfg.row_registry, k)) {
        bool clean = true;
        for (int i = 0; i < k; ++i)
            if (cfg.row_registry.index_of(rv.rules[static_cast<std::size_t>(i)]) ==
                excluded_idx[static_cast<std::size_t>(i)])
                clean = false;
        (clean ? l1_family : l1_test).push_back(rv);
    }
    std::vector<std::size_t> l1_order(l1_family.size());
    for (std::size_t i = 0; i < l1_order.size(); ++i) l1_order[i] = i;
    {
        Rng rng(derive_seed(seed, {name_salt("select_l1")}));
        rng.shuffle(l1_order);
    }
    std::vector<RuleVector> l1_train_combos;
    for (std::size_t i = static_cast<std::size_t>(reserve_count); i < l1_order.size(); ++i)
        l1_train_combos.push_back(l1_family[l1_order[i]]);

    auto emit = [&](const std::string& name, const std::vector<RuleVector>& combos) {
        const auto problems = generate_split_problems(gen, combos, problems_per_combo,
                                                      seed, name, workers);
        add_split(manifest, outdir, name, combos, problems_per_combo, problems);
    };
    emit("train", train_combos);
    emit("id", train_combos);
    emit("inpo_ood", inpo_combos);
    emit("expo_ood_l2", l2_combos);
    emit("train_l1", l1_train_combos);
    emit("expo_ood_l1", l1_test);
    write_manifest(manifest, outdir);
    return manifest;
}

DatasetManifest build_pretrain_set(const GeneratorConfig& cfg, int count,
                                   std::uint64_t seed,
                                   const std::filesystem::path& outdir, int workers) {
    std::filesystem::create_directories(outdir);
    DatasetManifest manifest = make_manifest(cfg, seed);
    const ProblemGenerator gen(cfg);
    const auto combos = all_rule_vectors(cfg.row_registry, cfg.attribute_count());

    const std::uint64_t salt = name_salt("pretrain");
    std::vector<GenJob> jobs;
    jobs.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i)
        jobs.push_back({static_cast<std::size_t>(i) % combos.size(),
                        derive_seed(seed, {salt, static_cast<std::uint64_t>(i)})});
    const auto problems = run_jobs(gen, combos, jobs, workers);
    add_split(manifest, outdir, "pretrain", combos, 0, problems);
    write_manifest(manifest, outdir);
    return manifest;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

std::string kind_to_string(RuleKind kind) {
    switch (kind) {
        case RuleKind::constant: return "constant";
        case RuleKind::progression: return "progression";
        case RuleKind::add: return "add";
        case RuleKind::minus: return "minus";
        case RuleKind::min: return "min";
        case RuleKind::max: return "max";
        case RuleKind::double_first: return "double_first";
        case RuleKind::double_second: return "double_second";
    }
    return "?";
}

ordered_json registry_to_json(const RuleRegistry& reg) {
    ordered_json j;
    j["name"] = reg.name;
    j["rules"] = ordered_json::array();
    for (std::size_t i = 0; i < reg.rules.size(); ++i) {
        const Rule& r = reg.rules[i];
        j["rules"].push_back({{"no", i + 1},
                              {"name", display_name(r)},
                              {"kind", kind_to_string(r.kind)},
                              {"step", r.step}});
    }
    j["containment_exceptions"] = ordered_json::array();
    for (auto [p, s] : reg.containment_exceptions)
        j["containment_exceptions"].push_back({p + 1, s + 1});
    return j;
}

RuleRegistry registry_from_json(const ordered_json& j) {
    RuleRegistry reg;
    reg.name = j.at("name").get<std::string>();
    for (const auto& rj : j.at("rules")) {
        const auto name = rj.at("name").get<std::string>();
        const auto rule = rule_from_name(name);
        if (!rule) throw DatasetError("unknown rule name in manifest: " + name);
        reg.rules.push_back(*rule);
    }
    for (const auto& ej : j.at("containment_exceptions"))
        reg.containment_exceptions.emplace_back(ej.at(0).get<int>() - 1,
                                                ej.at(1).get<int>() - 1);
    return reg;
}

ordered_json combo_to_json(const RuleVector& rv) {
    ordered_json arr = ordered_json::array();
    for (const Rule& r : rv.rules) arr.push_back(display_name(r));
    return arr;
}

RuleVector combo_from_json(const ordered_json& arr, const RuleRegistry& reg,
                           const char* what) {
    RuleVector rv;
    for (const auto& nj : arr) {
        const auto name = nj.get<std::string>();
        const auto rule = rule_from_name(name);
        if (!rule || !reg.contains(*rule))
            throw DatasetError(std::string(what) + ": rule '" + name +
                               "' is not in registry " + reg.name);
        rv.rules.push_back(*rule);
    }
    return rv;
}

ordered_json panels_to_json(const std::vector<Panel>& panels) {
    ordered_json arr = ordered_json::array();
    for (const Panel& p : panels) arr.push_back(p.values);
    return arr;
}

std::vector<Panel> panels_from_json(const ordered_json& arr, int k, const char* what) {
    std::vector<Panel> out;
    for (const auto& pj : arr) {
        Panel p;
        p.values = pj.get<std::vector<int>>();
        if (static_cast<int>(p.values.size()) != k)
            throw DatasetError(std::string(what) + ": panel has wrong attribute count");
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace

std::string problem_to_line(const Problem& problem, const DatasetManifest& manifest) {
    (void)manifest;
    ordered_json j;
    j["combo"] = combo_to_json(problem.rule_vector);
    j["contexts"] = panels_to_json(problem.contexts);
    j["questions"] = panels_to_json(problem.questions);
    j["candidates"] = panels_to_json(problem.candidates);
    j["target"] = problem.target_index;
    j["cand_combos"] = ordered_json::array();
    for (const RuleVector& rv : problem.candidate_combos)
        j["cand_combos"].push_back(combo_to_json(rv));
    j["seed"] = problem.seed;
    return j.dump();
}

Problem problem_from_line(const std::string& line, const DatasetManifest& manifest) {
    ordered_json j;
    try {
        j = ordered_json::parse(line);
    } catch (const ordered_json::parse_error& e) {
        throw DatasetError(std::string("malformed record: ") + e.what());
    }
    try {
        Problem p;
        const int k = manifest.attribute_count;
        p.rule_vector = combo_from_json(j.at("combo"), manifest.row_registry, "combo");
        if (static_cast<int>(p.rule_vector.size()) != k)
            throw DatasetError("combo length does not match the manifest");
        p.contexts = panels_from_json(j.at("contexts"), k, "contexts");
        p.questions = panels_from_json(j.at("questions"), k, "questions");
        p.candidates = panels_from_json(j.at("candidates"), k, "candidates");
        p.target_index = j.at("target").get<int>();
        for (const auto& cj : j.at("cand_combos"))
            p.candidate_combos.push_back(
                combo_from_json(cj, manifest.distract_registry, "cand_combos"));
        p.seed = j.at("seed").get<std::uint64_t>();
        if (p.contexts.size() != 6 || p.questions.size() != 2 ||
            p.candidates.size() != p.candidate_combos.size())
            throw DatasetError("record has inconsistent panel counts");
        if (p.target_index < 0 ||
            p.target_index >= static_cast<int>(p.candidates.size()))
            throw DatasetError("target index out of range");
        return p;
    } catch (const ordered_json::exception& e) {
        throw DatasetError(std::string("malformed record: ") + e.what());
    }
}

std::uint64_t write_problems_file(const std::vector<Problem>& problems,
                                  const DatasetManifest& manifest,
                                  const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DatasetError("cannot open " + path.string() + " for writing");
    std::uint64_t checksum = 1469598103934665603ULL;
    for (const Problem& p : problems) {
        std::string line = problem_to_line(p, manifest);
        line += '\n';
        checksum = fnv1a(line.data(), line.size(), checksum);
        out << line;
    }
    out.close();
    if (!out) throw DatasetError("failed writing " + path.string());
    return checksum;
}

const SplitInfo& DatasetManifest::split(const std::string& name) const {
    for (const SplitInfo& s : splits)
        if (s.name == name) return s;
    throw DatasetError("manifest has no split named '" + name + "'");
}

bool DatasetManifest::has_split(const std::string& name) const {
    for (const SplitInfo& s : splits)
        if (s.name == name) return true;
    return false;
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& dir) {
    ordered_json j;
    j["format"] = manifest.format_version;
    j["tool"] = manifest.tool_version;
    j["seed"] = manifest.seed;
    j["attribute_count"] = manifest.attribute_count;
    j["cardinality"] = manifest.cardinality;
    j["attributes"] = manifest.attributes;
    j["row_registry"] = registry_to_json(manifest.row_registry);
    j["distract_registry"] = registry_to_json(manifest.distract_registry);
    j["splits"] = ordered_json::array();
    for (const SplitInfo& s : manifest.splits) {
        ordered_json sj;
        sj["name"] = s.name;
        sj["file"] = s.file;
        sj["problems_per_combo"] = s.problems_per_combo;
        sj["problem_count"] = s.problem_count;
        sj["checksum"] = s.checksum;
        sj["combos"] = ordered_json::array();
        for (const RuleVector& rv : s.combos) sj["combos"].push_back(combo_to_json(rv));
        j["splits"].push_back(std::move(sj));
    }
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    if (!out) throw DatasetError("cannot write manifest in " + dir.string());
    out << j.dump(2) << '\n';
}

DatasetManifest read_manifest(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json", std::ios::binary);
    if (!in) throw DatasetError("no manifest.json in " + dir.string());
    ordered_json j;
    try {
        in >> j;
    } catch (const ordered_json::parse_error& e) {
        throw DatasetError(std::string("malformed manifest: ") + e.what());
    }
    DatasetManifest m;
    m.format_version = j.at("format").get<int>();
    if (m.format_version != kDatasetFormatVersion)
        throw DatasetError("unsupported dataset format version " +
                           std::to_string(m.format_version));
    m.tool_version = j.at("tool").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.attribute_count = j.at("attribute_count").get<int>();
    m.cardinality = j.at("cardinality").get<int>();
    m.attributes = j.at("attributes").get<std::vector<std::string>>();
    m.row_registry = registry_from_json(j.at("row_registry"));
    m.distract_registry = registry_from_json(j.at("distract_registry"));
    for (const auto& sj : j.at("splits")) {
        SplitInfo s;
        s.name = sj.at("name").get<std::string>();
        s.file = sj.at("file").get<std::string>();
        s.problems_per_combo = sj.at("problems_per_combo").get<int>();
        s.problem_count = sj.at("problem_count").get<std::size_t>();
        s.checksum = sj.at("checksum").get<std::uint64_t>();
        for (const auto& cj : sj.at("combos"))
            s.combos.push_back(combo_from_json(cj, m.row_registry, "manifest combos"));
        m.splits.push_back(std::move(s));
    }
    return m;
}

std::vector<Problem> load_split(const DatasetManifest& manifest,
                                const std::filesystem::path& dir,
                                const std::string& split_name) {
    const SplitInfo& info = manifest.split(split_name);
    const auto path = dir / info.file;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DatasetError("cannot open " + path.string());
    std::vector<Problem> problems;
    problems.reserve(info.problem_count);
    std::string line;
    std::size_t line_no = 0;
    std::uint64_t checksum = 1469598103934665603ULL;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            problems.push_back(problem_from_line(line, manifest));
        } catch (const DatasetError& e) {
            throw DatasetError(info.file + ":" + std::to_string(line_no) + ": " +
                               e.what());
        }
        line += '\n';
        checksum = fnv1a(line.data(), line.size(), checksum);
    }
    if (problems.size() != info.problem_count)
        throw DatasetError(info.file + ": manifest declares " +
                           std::to_string(info.problem_count) + " problems but file has " +
                           std::to_string(problems.size()));
    if (checksum != info.checksum)
        throw DatasetError(info.file + ": checksum mismatch against the manifest");
    return problems;
}

}  // namespace rgame
