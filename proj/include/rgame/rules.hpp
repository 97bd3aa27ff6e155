#pragma once
// Attribute domains, row rules, and the uniqueness machinery that keeps
// generated matrices unambiguous: a row triple must identify its rule, and
// no shipped rule's satisfying set may hide inside another's (declared
// containments excepted).

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace rgame {

// Values of attribute `attribute_index` are the integers 1..cardinality.
struct AttributeDomain {
    int attribute_index = 0;
    int cardinality = 0;

    bool contains(int v) const { return v >= 1 && v <= cardinality; }
};

std::vector<AttributeDomain> make_domains(int attribute_count, int cardinality);
std::vector<std::string> attribute_names(int attribute_count);

enum class RuleKind {
    constant,       // a = b = c
    progression,    // b = a + step, c = b + step
    add,            // c = a + b
    minus,          // c = a - b
    min,            // c = min(a, b)
    max,            // c = max(a, b)
    double_first,   // c = 2a
    double_second,  // c = 2b
};

struct Rule {
    RuleKind kind = RuleKind::constant;
    int step = 0;  // progression only

    friend bool operator==(const Rule&, const Rule&) = default;
};

std::string display_name(const Rule& rule);
std::optional<Rule> rule_from_name(const std::string& name);

using Triple = std::array<int, 3>;
using Prefix = std::array<int, 2>;

// One rule per attribute; the hidden variable a message must convey.
struct RuleVector {
    std::vector<Rule> rules;

    std::size_t size() const { return rules.size(); }
    friend bool operator==(const RuleVector&, const RuleVector&) = default;
};

// One symbolic panel: one value per attribute.
struct Panel {
    std::vector<int> values;

    std::size_t size() const { return values.size(); }
    friend bool operator==(const Panel&, const Panel&) = default;
};

// A named rule set plus its declared containment exceptions.
//
// An exception (primary, shadowed) records that every triple satisfying
// `primary` also satisfies `shadowed` (e.g. a constant row always satisfies
// min and max); match resolution drops the shadowed rule whenever the primary
// matches, so uniqueness is judged modulo these known containments.
struct RuleRegistry {
    std::string name;
    std::vector<Rule> rules;
    std::vector<std::pair<int, int>> containment_exceptions;

    int index_of(const Rule& rule) const;
    bool contains(const Rule& rule) const { return index_of(rule) >= 0; }
};

// Shipped registries. Rule numbers are 1-based registry positions; the
// generalization splits hold out rule No.8 of the joint registry.
RuleRegistry joint_registry();
RuleRegistry pretrain_registry();
RuleRegistry desk_joint_registry();
// Row rules from `rows` plus extra distract-only rules from `extra`.
RuleRegistry merge_registries(const RuleRegistry& rows, const RuleRegistry& extra);

// True iff the triple obeys the rule's semantic predicate. Total function.
bool satisfies(const Rule& rule, const Triple& t);

// The unique in-domain completion of (a, b) under `rule`, if one exists.
std::optional<int> complete_third(const Rule& rule, const Prefix& prefix,
                                  const AttributeDomain& domain);

bool prefix_consistent(const Rule& rule, const Prefix& prefix,
                       const AttributeDomain& domain);

// Registry indices of all rules satisfied by the triple.
std::vector<int> matching_rules(const Triple& t, const RuleRegistry& reg);

// Matches after dropping shadowed rules per the registry's exceptions.
std::vector<int> effective_matches(const Triple& t, const RuleRegistry& reg);

// The single rule in `rule_set` satisfied by the triple; absent if zero or
// two-plus rules match. Strict: ignores containment exceptions.
std::optional<Rule> unique_match(const Triple& t, const std::vector<Rule>& rule_set);

// Uniqueness modulo the registry's declared containments; the predicate the
// generator and the symbolic agents share.
std::optional<Rule> unique_effective_match(const Triple& t, const RuleRegistry& reg);

// A named satisfaction predicate, so the set validator can also be run
// against rules that are never shipped (test fixtures).
struct RulePredicate {
    std::string name;
    std::function<bool(int, int, int)> satisfied;
};

struct SubsumedPair {
    std::string subsumed;  // every satisfying triple of this rule...
    std::string by;        // ...also satisfies this one
};

// Exhaustively enumerates all in-domain triples per predicate and reports
// undeclared subset containments. Empty result means the set is admissible.
std::vector<SubsumedPair> find_subsumed_pairs(
    const std::vector<RulePredicate>& preds, const AttributeDomain& domain,
    const std::vector<std::pair<std::string, std::string>>& declared = {});

std::vector<RulePredicate> registry_predicates(const RuleRegistry& reg);
std::vector<SubsumedPair> validate_rule_set_disjointness(const RuleRegistry& reg,
                                                         const AttributeDomain& domain);

}  // namespace rgame
