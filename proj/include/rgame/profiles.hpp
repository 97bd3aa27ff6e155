#pragma once
// Named experiment profiles. The desk profiles are sized so that a full
// two-stage run finishes in minutes on one CPU core; the full-nXX profiles
// carry the reference dimensions and are meant for overnight runs.

#include <optional>
#include <string>
#include <vector>

#include "rgame/agents.hpp"
#include "rgame/forge.hpp"

namespace rgame {

struct Profile {
    std::string name;
    int attribute_count = 4;
    int cardinality = 20;
    int problems_per_combo = 20;  // main dataset; half train, half test
    int pretrain_cases = 2000;
    RuleRegistry joint;
    RuleRegistry pretrain;
    ModelConfig model;  // channel lives inside
    TrainConfig stage1;
    TrainConfig stage2;
    std::vector<int> etl_target_cardinalities;
    bool has_generalization_splits = false;  // needs the 4x8 rule layout

    std::vector<AttributeDomain> domains() const {
        return make_domains(attribute_count, cardinality);
    }
    GeneratorConfig main_generator() const;
    GeneratorConfig pretrain_generator() const;
    OracleCodebook joint_codebook() const;
    OracleCodebook pretrain_codebook() const;
    Profile with_cardinality(int n) const;  // same setup over a resized domain
};

Profile desk_tiny_profile();
Profile desk_small_profile();
Profile full_profile(int cardinality);  // 20, 30, 40 or 80

std::optional<Profile> profile_by_name(const std::string& name);
std::vector<std::string> profile_names();

}  // namespace rgame
