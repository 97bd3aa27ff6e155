#include "rgame/rules.hpp"

#include <algorithm>
#include <stdexcept>

namespace rgame {

std::vector<AttributeDomain> make_domains(int attribute_count, int cardinality) {
    if (attribute_count < 1) throw std::invalid_argument("attribute_count < 1");
    if (cardinality < 2) throw std::invalid_argument("cardinality < 2");
    std::vector<AttributeDomain> out;
    out.reserve(static_cast<std::size_t>(attribute_count));
    for (int i = 0; i < attribute_count; ++i) out.push_back({i, cardinality});
    return out;
}

std::vector<std::string> attribute_names(int attribute_count) {
    static const char* canonical[] = {"number", "color", "size", "shape"};
    std::vector<std::string> names;
    for (int i = 0; i < attribute_count; ++i) {
        if (attribute_count == 4)
            names.emplace_back(canonical[i]);
        else
            names.push_back("attr" + std::to_string(i));
    }
    return names;
}

std::string display_name(const Rule& rule) {
    switch (rule.kind) {
        case RuleKind::constant: return "constant";
        case RuleKind::progression:
            return (rule.step < 0 ? "varprogression_" : "progression_") +
                   std::to_string(rule.step);
        case RuleKind::add: return "add";
        case RuleKind::minus: return "minus";
        case RuleKind::min: return "min";
        case RuleKind::max: return "max";
        case RuleKind::double_first: return "double_first";
        case RuleKind::double_second: return "double_second";
    }
    return "?";
}

std::optional<Rule> rule_from_name(const std::string& name) {
    if (name == "constant") return Rule{RuleKind::constant, 0};
    if (name == "add") return Rule{RuleKind::add, 0};
    if (name == "minus") return Rule{RuleKind::minus, 0};
    if (name == "min") return Rule{RuleKind::min, 0};
    if (name == "max") return Rule{RuleKind::max, 0};
    if (name == "double_first") return Rule{RuleKind::double_first, 0};
    if (name == "double_second") return Rule{RuleKind::double_second, 0};
    for (const char* prefix : {"progression_", "varprogression_"}) {
        const std::string p(prefix);
        if (name.rfind(p, 0) == 0) {
            try {
                return Rule{RuleKind::progression, std::stoi(name.substr(p.size()))};
            } catch (const std::exception&) {
                return std::nullopt;
            }
        }
    }
    return std::nullopt;
}

int RuleRegistry::index_of(const Rule& rule) const {
    for (std::size_t i = 0; i < rules.size(); ++i)
        if (rules[i] == rule) return static_cast<int>(i);
    return -1;
}

RuleRegistry joint_registry() {
    RuleRegistry reg;
    reg.name = "joint";
    reg.rules = {
        Rule{RuleKind::add, 0},          // No.1
        Rule{RuleKind::minus, 0},        // No.2
        Rule{RuleKind::min, 0},          // No.3
        Rule{RuleKind::max, 0},          // No.4
        Rule{RuleKind::constant, 0},     // No.5
        Rule{RuleKind::progression, 2},  // No.6
        Rule{RuleKind::progression, -1}, // No.7
        Rule{RuleKind::progression, 1},  // No.8
    };
    // A constant row (v,v,v) always satisfies min and max as well.
    reg.containment_exceptions = {{4, 2}, {4, 3}};
    return reg;
}

RuleRegistry pretrain_registry() {
    RuleRegistry reg;
    reg.name = "pretrain";
    reg.rules = {
        Rule{RuleKind::progression, 3},
        Rule{RuleKind::progression, -3},
        Rule{RuleKind::double_first, 0},
        Rule{RuleKind::double_second, 0},
    };
    return reg;
}

RuleRegistry desk_joint_registry() {
    RuleRegistry reg;
    reg.name = "desk-joint";
    reg.rules = {
        Rule{RuleKind::add, 0},
        Rule{RuleKind::minus, 0},
        Rule{RuleKind::min, 0},
        Rule{RuleKind::max, 0},
    };
    return reg;
}

RuleRegistry merge_registries(const RuleRegistry& rows, const RuleRegistry& extra) {
    RuleRegistry merged = rows;
    merged.name = rows.name + "+" + extra.name;
    for (const Rule& r : extra.rules)
        if (!merged.contains(r)) merged.rules.push_back(r);
    for (auto [p, s] : extra.containment_exceptions) {
        const int pi = merged.index_of(extra.rules[static_cast<std::size_t>(p)]);
        const int si = merged.index_of(extra.rules[static_cast<std::size_t>(s)]);
        merged.containment_exceptions.emplace_back(pi, si);
    }
    return merged;
}

bool satisfies(const Rule& rule, const Triple& t) {
    const int a = t[0], b = t[1], c = t[2];
    switch (rule.kind) {
        case RuleKind::constant: return a == b && b == c;
        case RuleKind::progression:
            return b == a + rule.step && c == b + rule.step;
        case RuleKind::add: return c == a + b;
        case RuleKind::minus: return c == a - b;
        case RuleKind::min: return c == std::min(a, b);
        case RuleKind::max: return c == std::max(a, b);
        case RuleKind::double_first: return c == 2 * a;
        case RuleKind::double_second: return c == 2 * b;
    }
    return false;
}

std::optional<int> complete_third(const Rule& rule, const Prefix& prefix,
                                  const AttributeDomain& domain) {
    const int a = prefix[0], b = prefix[1];
    int c = 0;
    switch (rule.kind) {
        case RuleKind::constant:
            if (a != b) return std::nullopt;
            c = a;
            break;
        case RuleKind::progression:
            if (b != a + rule.step) return std::nullopt;
            c = b + rule.step;
            break;
        case RuleKind::add: c = a + b; break;
        case RuleKind::minus: c = a - b; break;
        case RuleKind::min: c = std::min(a, b); break;
        case RuleKind::max: c = std::max(a, b); break;
        case RuleKind::double_first: c = 2 * a; break;
        case RuleKind::double_second: c = 2 * b; break;
    }
    if (!domain.contains(c)) return std::nullopt;
    return c;
}

bool prefix_consistent(const Rule& rule, const Prefix& prefix,
                       const AttributeDomain& domain) {
    return complete_third(rule, prefix, domain).has_value();
}

std::vector<int> matching_rules(const Triple& t, const RuleRegistry& reg) {
    std::vector<int> out;
    for (std::size_t i = 0; i < reg.rules.size(); ++i)
        if (satisfies(reg.rules[i], t)) out.push_back(static_cast<int>(i));
    return out;
}

std::vector<int> effective_matches(const Triple& t, const RuleRegistry& reg) {
    std::vector<int> matches = matching_rules(t, reg);
    for (auto [primary, shadowed] : reg.containment_exceptions) {
        const bool has_primary =
            std::find(matches.begin(), matches.end(), primary) != matches.end();
        if (!has_primary) continue;
        matches.erase(std::remove(matches.begin(), matches.end(), shadowed),
                      matches.end());
    }
    return matches;
}

std::optional<Rule> unique_match(const Triple& t, const std::vector<Rule>& rule_set) {
    std::optional<Rule> found;
    for (const Rule& r : rule_set) {
        if (!satisfies(r, t)) continue;
        if (found) return std::nullopt;
        found = r;
    }
    return found;
}

std::optional<Rule> unique_effective_match(const Triple& t, const RuleRegistry& reg) {
    const std::vector<int> matches = effective_matches(t, reg);
    if (matches.size() != 1) return std::nullopt;
    return reg.rules[static_cast<std::size_t>(matches[0])];
}

std::vector<SubsumedPair> find_subsumed_pairs(
    const std::vector<RulePredicate>& preds, const AttributeDomain& domain,
    const std::vector<std::pair<std::string, std::string>>& declared) {
    const int n = domain.cardinality;
    const std::size_t count = preds.size();
    // Satisfying-triple sets as bitsets over the n^3 grid.
    std::vector<std::vector<bool>> sat(count);
    std::vector<std::size_t> sizes(count, 0);
    for (std::size_t i = 0; i < count; ++i) {
        sat[i].assign(static_cast<std::size_t>(n) * n * n, false);
        std::size_t idx = 0;
        for (int a = 1; a <= n; ++a)
            for (int b = 1; b <= n; ++b)
                for (int c = 1; c <= n; ++c, ++idx)
                    if (preds[i].satisfied(a, b, c)) {
                        sat[i][idx] = true;
                        ++sizes[i];
                    }
    }
    std::vector<SubsumedPair> offending;
    for (std::size_t i = 0; i < count; ++i) {
        if (sizes[i] == 0) continue;
        for (std::size_t j = 0; j < count; ++j) {
            if (i == j) continue;
            bool subset = true;
            for (std::size_t idx = 0; idx < sat[i].size() && subset; ++idx)
                if (sat[i][idx] && !sat[j][idx]) subset = false;
            if (!subset) continue;
            const bool is_declared =
                std::any_of(declared.begin(), declared.end(), [&](const auto& d) {
                    return d.first == preds[i].name && d.second == preds[j].name;
                });
            if (!is_declared)
                offending.push_back({preds[i].name, preds[j].name});
        }
    }
    return offending;
}

std::vector<RulePredicate> registry_predicates(const RuleRegistry& reg) {
    std::vector<RulePredicate> preds;
    preds.reserve(reg.rules.size());
    for (const Rule& r : reg.rules)
        preds.push_back({display_name(r), [r](int a, int b, int c) {
                             return satisfies(r, Triple{a, b, c});
                         }});
    return preds;
}

std::vector<SubsumedPair> validate_rule_set_disjointness(const RuleRegistry& reg,
                                                         const AttributeDomain& domain) {
    std::vector<std::pair<std::string, std::string>> declared;
    for (auto [p, s] : reg.containment_exceptions)
        declared.emplace_back(display_name(reg.rules[static_cast<std::size_t>(p)]),
                              display_name(reg.rules[static_cast<std::size_t>(s)]));
    return find_subsumed_pairs(registry_predicates(reg), domain, declared);
}

}  // namespace rgame
