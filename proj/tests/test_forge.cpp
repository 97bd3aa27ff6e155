#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "rgame/forge.hpp"
#include "rgame/profiles.hpp"

using namespace rgame;
namespace fs = std::filesystem;

namespace {

GeneratorConfig desk_tiny_gen() { return desk_tiny_profile().main_generator(); }

GeneratorConfig joint_gen(int n) {
    GeneratorConfig cfg;
    cfg.row_registry = joint_registry();
    cfg.distract_registry = joint_registry();
    cfg.domains = make_domains(4, n);
    return cfg;
}

// One-attribute fixture used for the hand-checkable distractor cases.
GeneratorConfig one_attr_gen(std::vector<Rule> rules, int n) {
    GeneratorConfig cfg;
    cfg.row_registry.name = "fixture";
    cfg.row_registry.rules = std::move(rules);
    cfg.distract_registry = cfg.row_registry;
    cfg.domains = make_domains(1, n);
    return cfg;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("rgame_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("sampled rows uniquely match their rule") {
    const ProblemGenerator gen(joint_gen(20));
    Rng rng(42);
    const AttributeDomain dom{0, 20};
    for (const Rule& rule : joint_registry().rules) {
        for (int i = 0; i < 25; ++i) {
            const Triple t = gen.sample_row(rule, dom, rng);
            CHECK(satisfies(rule, t));
            const auto eff = unique_effective_match(t, joint_registry());
            REQUIRE(eff.has_value());
            CHECK(*eff == rule);
        }
    }
}

TEST_CASE("constant rows exist because min and max defer to constant") {
    const ProblemGenerator gen(joint_gen(20));
    const AttributeDomain dom{0, 20};
    CHECK(gen.admissible_pair_count({RuleKind::constant}, dom) > 0);

    // Without the declared containments every constant triple also matches
    // min and max, so the admissible set is structurally empty.
    GeneratorConfig strict = one_attr_gen({{RuleKind::constant}, {RuleKind::min}}, 20);
    const ProblemGenerator strict_gen(strict);
    CHECK(strict_gen.admissible_pair_count({RuleKind::constant}, {0, 20}) == 0);
    Rng rng(1);
    CHECK_THROWS_AS(strict_gen.sample_row({RuleKind::constant}, {0, 20}, rng),
                    AdmissibleSetEmpty);
    RuleVector rv{{{RuleKind::constant}}};
    CHECK_THROWS_AS(strict_gen.generate_problem(rv, 7), AdmissibleSetEmpty);
}

TEST_CASE("distractors come from the prefix-consistent product minus the truth") {
    GeneratorConfig cfg = one_attr_gen(
        {{RuleKind::constant}, {RuleKind::progression, 1}, {RuleKind::add}}, 20);
    const ProblemGenerator gen(cfg);
    const std::vector<Panel> questions = {Panel{{2}}, Panel{{3}}};
    const RuleVector truth{{{RuleKind::add}}};
    Rng rng(11);

    // Q=(2,3): constant is inconsistent, progression(+1) gives 4, add gives 5.
    auto [panels, combos] = gen.generate_distractors(questions, truth, 1, rng);
    REQUIRE(panels.size() == 1);
    CHECK(panels[0] == Panel{{4}});
    REQUIRE(combos.size() == 1);
    CHECK(combos[0].rules[0] == Rule{RuleKind::progression, 1});

    // The space holds exactly one wrong combo, so asking for two must fail.
    CHECK_THROWS_AS(gen.generate_distractors(questions, truth, 2, rng),
                    DistractSpaceTooSmall);
}

TEST_CASE("equal question values collapse min and max distractors") {
    GeneratorConfig cfg =
        one_attr_gen({{RuleKind::min}, {RuleKind::max}, {RuleKind::add}}, 20);
    const ProblemGenerator gen(cfg);
    const std::vector<Panel> questions = {Panel{{3}}, Panel{{3}}};
    const RuleVector truth{{{RuleKind::add}}};
    Rng rng(5);

    // min and max both imply 3; only one distinct distractor panel exists.
    auto [panels, combos] = gen.generate_distractors(questions, truth, 1, rng);
    REQUIRE(panels.size() == 1);
    CHECK(panels[0] == Panel{{3}});
    CHECK_THROWS_AS(gen.generate_distractors(questions, truth, 2, rng),
                    DistractSpaceTooSmall);
}

TEST_CASE("generated problems satisfy every structural invariant") {
    const ProblemGenerator gen(joint_gen(20));
    const std::vector<RuleVector> combos = all_rule_vectors(joint_registry(), 4);
    Rng pick(3);
    for (int i = 0; i < 60; ++i) {
        const RuleVector& rv = combos[pick.uniform_below(combos.size())];
        const Problem p = gen.generate_problem(rv, derive_seed(99, {static_cast<std::uint64_t>(i)}));
        const AuditReport report =
            audit_problem(p, joint_registry(), joint_registry(), make_domains(4, 20));
        CHECK(report.ok());
        if (!report.ok())
            for (const AuditViolation& v : report.violations)
                MESSAGE(v.code, ": ", v.detail);
        CHECK(p.rule_vector == rv);
        CHECK(p.candidate_combos[static_cast<std::size_t>(p.target_index)] == rv);
    }
}

TEST_CASE("generation is deterministic in the seed") {
    const ProblemGenerator gen(desk_tiny_gen());
    const RuleVector rv{{{RuleKind::add}, {RuleKind::min}}};
    DatasetManifest manifest;
    manifest.seed = 1;
    manifest.attribute_count = 2;
    manifest.cardinality = 10;
    manifest.attributes = attribute_names(2);
    manifest.row_registry = desk_joint_registry();
    manifest.distract_registry = desk_joint_registry();

    const Problem a = gen.generate_problem(rv, 1234);
    const Problem b = gen.generate_problem(rv, 1234);
    const Problem c = gen.generate_problem(rv, 1235);
    CHECK(problem_to_line(a, manifest) == problem_to_line(b, manifest));
    CHECK(problem_to_line(a, manifest) != problem_to_line(c, manifest));
}

TEST_CASE("pretrain problems keep rows pure while distractors borrow rules") {
    const Profile prof = desk_tiny_profile();
    const ProblemGenerator gen(prof.pretrain_generator());
    const std::vector<RuleVector> combos = all_rule_vectors(prof.pretrain, 2);
    const RuleRegistry distract = merge_registries(prof.pretrain, prof.joint);
    for (int i = 0; i < 20; ++i) {
        const Problem p =
            gen.generate_problem(combos[static_cast<std::size_t>(i) % combos.size()],
                                 derive_seed(5, {static_cast<std::uint64_t>(i)}));
        for (const Rule& r : p.rule_vector.rules) CHECK(prof.pretrain.contains(r));
        CHECK(audit_problem(p, prof.pretrain, distract, prof.domains()).ok());
    }
}

TEST_CASE("audit pinpoints injected corruption") {
    const ProblemGenerator gen(joint_gen(20));
    const RuleVector rv{{{RuleKind::add},
                         {RuleKind::minus},
                         {RuleKind::progression, 2},
                         {RuleKind::max}}};
    const Problem clean = gen.generate_problem(rv, 77);
    const auto domains = make_domains(4, 20);
    REQUIRE(audit_problem(clean, joint_registry(), joint_registry(), domains).ok());

    auto has_code = [](const AuditReport& r, const std::string& code) {
        return std::any_of(r.violations.begin(), r.violations.end(),
                           [&](const AuditViolation& v) { return v.code == code; });
    };

    SUBCASE("corrupted target value") {
        Problem bad = clean;
        Panel& target = bad.candidates[static_cast<std::size_t>(bad.target_index)];
        target.values[0] = target.values[0] == 1 ? 2 : target.values[0] - 1;
        const AuditReport r = audit_problem(bad, joint_registry(), joint_registry(), domains);
        CHECK_FALSE(r.ok());
        CHECK(has_code(r, "target_unique"));
    }

    SUBCASE("duplicated candidate") {
        Problem bad = clean;
        const std::size_t other = bad.target_index == 0 ? 1 : 0;
        bad.candidates[other] = bad.candidates[static_cast<std::size_t>(bad.target_index)];
        const AuditReport r = audit_problem(bad, joint_registry(), joint_registry(), domains);
        CHECK_FALSE(r.ok());
        CHECK(has_code(r, "duplicate_candidate"));
    }

    SUBCASE("corrupted context row") {
        Problem bad = clean;
        bad.contexts[1].values[2] = bad.contexts[1].values[2] == 20
                                        ? 1
                                        : bad.contexts[1].values[2] + 1;
        const AuditReport r = audit_problem(bad, joint_registry(), joint_registry(), domains);
        CHECK_FALSE(r.ok());
        CHECK(has_code(r, "row_rule"));
    }

    SUBCASE("distract combo swapped for the wrong rule") {
        Problem bad = clean;
        const std::size_t slot = bad.target_index == 0 ? 1 : 0;
        bad.candidate_combos[slot] = rv;  // now two slots claim the true combo
        const AuditReport r = audit_problem(bad, joint_registry(), joint_registry(), domains);
        CHECK_FALSE(r.ok());
        CHECK(has_code(r, "distract_combo"));
    }

    SUBCASE("wrong shapes are reported before anything else") {
        Problem bad = clean;
        bad.contexts.pop_back();
        const AuditReport r = audit_problem(bad, joint_registry(), joint_registry(), domains);
        CHECK_FALSE(r.ok());
        CHECK(has_code(r, "shape"));
    }
}

TEST_CASE("perturbation candidates recreate the guessable layout") {
    const ProblemGenerator gen(joint_gen(20));
    const RuleVector rv{{{RuleKind::min},
                         {RuleKind::add},
                         {RuleKind::constant},
                         {RuleKind::progression, -1}}};
    const Problem clean = gen.generate_problem(rv, 123);
    Rng rng(9);
    const Problem biased = with_perturbation_candidates(clean, make_domains(4, 20), rng);
    CHECK(biased.candidates.size() == clean.candidates.size());
    CHECK(biased.candidates[static_cast<std::size_t>(biased.target_index)] ==
          clean.candidates[static_cast<std::size_t>(clean.target_index)]);
    // Perturbed distractors no longer follow recorded rule combos.
    const AuditReport r =
        audit_problem(biased, joint_registry(), joint_registry(), make_domains(4, 20));
    CHECK_FALSE(r.ok());
}

TEST_CASE("target position is uniform across problems") {
    const ProblemGenerator gen(desk_tiny_gen());
    const std::vector<RuleVector> combos = all_rule_vectors(desk_joint_registry(), 2);
    std::array<int, 8> counts{};
    const int total = 2000;
    for (int i = 0; i < total; ++i) {
        const RuleVector& rv = combos[static_cast<std::size_t>(i) % combos.size()];
        const Problem p =
            gen.generate_problem(rv, derive_seed(2024, {static_cast<std::uint64_t>(i)}));
        counts[static_cast<std::size_t>(p.target_index)] += 1;
    }
    double chi2 = 0.0;
    const double expected = total / 8.0;
    for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
    // 7 degrees of freedom; 24.32 is the 0.001 tail.
    CHECK(chi2 < 24.32);
}

TEST_CASE("rule vector enumeration is mixed-radix with the first attribute slowest") {
    const std::vector<RuleVector> combos = all_rule_vectors(desk_joint_registry(), 2);
    REQUIRE(combos.size() == 16);
    const RuleRegistry reg = desk_joint_registry();
    CHECK(combos[0].rules == std::vector<Rule>{reg.rules[0], reg.rules[0]});
    CHECK(combos[1].rules == std::vector<Rule>{reg.rules[0], reg.rules[1]});
    CHECK(combos[4].rules == std::vector<Rule>{reg.rules[1], reg.rules[0]});
    CHECK(combos.back().rules == std::vector<Rule>{reg.rules[3], reg.rules[3]});

    CHECK(all_rule_vectors(joint_registry(), 4).size() == 4096);
}

TEST_CASE("main dataset splits cover every combo half and half") {
    const fs::path dir = fresh_dir("main");
    const DatasetManifest m = build_main_dataset(desk_tiny_gen(), 4, 31, dir, 2);

    REQUIRE(m.has_split("train"));
    REQUIRE(m.has_split("test"));
    CHECK(m.split("train").problem_count == 32);
    CHECK(m.split("test").problem_count == 32);
    CHECK(m.split("train").combos.size() == 16);
    CHECK(m.split("train").problems_per_combo == 2);
    CHECK_THROWS_AS(m.split("nope"), DatasetError);

    const std::vector<Problem> train = load_split(m, dir, "train");
    REQUIRE(train.size() == 32);
    const auto domains = make_domains(2, 10);
    for (const Problem& p : train)
        CHECK(audit_problem(p, m.row_registry, m.distract_registry, domains).ok());

    // Odd problems_per_combo cannot split half and half.
    CHECK_THROWS(build_main_dataset(desk_tiny_gen(), 3, 31, fresh_dir("odd")));
}

TEST_CASE("regeneration reproduces identical bytes") {
    const fs::path dir1 = fresh_dir("repro1");
    const fs::path dir2 = fresh_dir("repro2");
    build_main_dataset(desk_tiny_gen(), 4, 77, dir1, 1);
    build_main_dataset(desk_tiny_gen(), 4, 77, dir2, 3);  // different worker count
    for (const char* f : {"manifest.json", "train.jsonl", "test.jsonl"})
        CHECK(read_file(dir1 / f) == read_file(dir2 / f));
}

TEST_CASE("manifest round-trips and checksums guard the files") {
    const fs::path dir = fresh_dir("roundtrip");
    const DatasetManifest built = build_main_dataset(desk_tiny_gen(), 2, 5, dir);
    const DatasetManifest loaded = read_manifest(dir);
    CHECK(loaded.seed == built.seed);
    CHECK(loaded.cardinality == built.cardinality);
    CHECK(loaded.row_registry.rules == built.row_registry.rules);
    REQUIRE(loaded.splits.size() == built.splits.size());
    for (std::size_t i = 0; i < loaded.splits.size(); ++i) {
        CHECK(loaded.splits[i].name == built.splits[i].name);
        CHECK(loaded.splits[i].checksum == built.splits[i].checksum);
        CHECK(loaded.splits[i].combos.size() == built.splits[i].combos.size());
    }
    // Writing the reloaded manifest again is byte-stable.
    const std::string before = read_file(dir / "manifest.json");
    write_manifest(loaded, dir);
    CHECK(read_file(dir / "manifest.json") == before);

    SUBCASE("a corrupted line is reported with its position") {
        std::string contents = read_file(dir / "train.jsonl");
        contents.insert(contents.find('\n') + 1, "not json\n");
        std::ofstream(dir / "train.jsonl", std::ios::binary) << contents;
        CHECK_THROWS_WITH_AS(load_split(loaded, dir, "train"),
                             doctest::Contains("train.jsonl:2"), DatasetError);
    }

    SUBCASE("a truncated file fails the count check") {
        std::string contents = read_file(dir / "train.jsonl");
        contents.resize(contents.rfind('\n', contents.size() - 2) + 1);
        std::ofstream(dir / "train.jsonl", std::ios::binary) << contents;
        CHECK_THROWS_AS(load_split(loaded, dir, "train"), DatasetError);
    }
}

TEST_CASE("generalization splits carve the combo space as specified") {
    GeneratorConfig cfg = joint_gen(20);
    const fs::path dir = fresh_dir("general");
    const DatasetManifest m =
        build_generalization_splits(cfg, 1, 404, dir, default_worker_count());

    const SplitInfo& train = m.split("train");
    const SplitInfo& id = m.split("id");
    const SplitInfo& inpo = m.split("inpo_ood");
    const SplitInfo& l2 = m.split("expo_ood_l2");
    const SplitInfo& train_l1 = m.split("train_l1");
    const SplitInfo& l1 = m.split("expo_ood_l1");

    CHECK(train.combos.size() == 2101);
    CHECK(id.combos.size() == 2101);
    CHECK(inpo.combos.size() == 300);
    CHECK(l2.combos.size() == 1695);
    CHECK(train_l1.combos.size() == 2101);
    CHECK(l1.combos.size() == 1695);
    CHECK(train.problem_count == 2101);
    CHECK(l2.problem_count == 1695);

    // Train and the interpolation set partition the seen-rule family.
    std::set<std::string> train_set, inpo_set;
    auto key = [](const RuleVector& rv) {
        std::string s;
        for (const Rule& r : rv.rules) s += display_name(r) + "|";
        return s;
    };
    for (const RuleVector& rv : train.combos) train_set.insert(key(rv));
    for (const RuleVector& rv : inpo.combos) inpo_set.insert(key(rv));
    CHECK(train_set.size() == 2101);
    CHECK(inpo_set.size() == 300);
    for (const std::string& s : inpo_set) CHECK(train_set.count(s) == 0);

    // The held-out rule appears in every level-2 combo and no seen combo.
    const Rule held_out = m.row_registry.rules.back();
    for (const RuleVector& rv : l2.combos)
        CHECK(std::count(rv.rules.begin(), rv.rules.end(), held_out) > 0);
    for (const RuleVector& rv : train.combos)
        CHECK(std::count(rv.rules.begin(), rv.rules.end(), held_out) == 0);

    // Level 1 holds out one specific rule per attribute position.
    const RuleRegistry reg = m.row_registry;
    const std::vector<Rule> excluded = {reg.rules[5], reg.rules[2], reg.rules[3],
                                        reg.rules[7]};
    for (const RuleVector& rv : train_l1.combos)
        for (std::size_t a = 0; a < 4; ++a) CHECK_FALSE(rv.rules[a] == excluded[a]);
    for (const RuleVector& rv : l1.combos) {
        bool hits = false;
        for (std::size_t a = 0; a < 4; ++a)
            if (rv.rules[a] == excluded[a]) hits = true;
        CHECK(hits);
    }

    // Sample a few problems from each split and audit them.
    for (const char* name : {"train", "inpo_ood", "expo_ood_l2", "expo_ood_l1"}) {
        const std::vector<Problem> ps = load_split(m, dir, name);
        for (std::size_t i = 0; i < ps.size(); i += ps.size() / 7)
            CHECK(audit_problem(ps[i], m.row_registry, m.distract_registry,
                                make_domains(4, 20))
                      .ok());
    }
}

TEST_CASE("pretrain set covers its registry round-robin") {
    const Profile prof = desk_tiny_profile();
    const fs::path dir = fresh_dir("pretrain");
    const DatasetManifest m = build_pretrain_set(prof.pretrain_generator(), 40, 9, dir);
    const SplitInfo& split = m.split("pretrain");
    CHECK(split.problem_count == 40);
    CHECK(split.combos.size() == 16);  // 4 rules over 2 attributes
    const std::vector<Problem> ps = load_split(m, dir, "pretrain");
    REQUIRE(ps.size() == 40);
    std::map<std::string, int> per_combo;
    for (const Problem& p : ps) {
        std::string k;
        for (const Rule& r : p.rule_vector.rules) k += display_name(r) + "|";
        per_combo[k] += 1;
    }
    // 40 problems over 16 combos: every combo twice, the first eight thrice.
    for (const auto& [k, c] : per_combo) CHECK(c >= 2);

    const DatasetManifest empty =
        build_pretrain_set(prof.pretrain_generator(), 0, 9, fresh_dir("pretrain0"));
    CHECK(empty.split("pretrain").problem_count == 0);
}
