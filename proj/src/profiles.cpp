#include "rgame/profiles.hpp"

namespace rgame {

GeneratorConfig Profile::main_generator() const {
    GeneratorConfig cfg;
    cfg.row_registry = joint;
    cfg.distract_registry = joint;
    cfg.domains = domains();
    return cfg;
}

GeneratorConfig Profile::pretrain_generator() const {
    GeneratorConfig cfg;
    cfg.row_registry = pretrain;
    // Distractors may draw on the full rule pool; rows stay pretrain-pure.
    // With only four held-out rules the prefix-consistent space is too small
    // to fill seven distinct wrong candidates.
    cfg.distract_registry = merge_registries(pretrain, joint);
    cfg.domains = domains();
    return cfg;
}

OracleCodebook Profile::joint_codebook() const {
    return OracleCodebook(joint, model.channel);
}

OracleCodebook Profile::pretrain_codebook() const {
    return OracleCodebook(pretrain, model.channel);
}

Profile Profile::with_cardinality(int n) const {
    Profile p = *this;
    p.cardinality = n;
    p.model.cardinality = n;
    if (n != cardinality) p.name = name + "@n" + std::to_string(n);
    return p;
}

Profile desk_tiny_profile() {
    Profile p;
    p.name = "desk-tiny";
    p.attribute_count = 2;
    p.cardinality = 10;
    p.problems_per_combo = 64;  // 16 combos -> 512 train + 512 test
    p.pretrain_cases = 512;
    p.joint = desk_joint_registry();
    p.pretrain = pretrain_registry();

    p.model.attribute_count = 2;
    p.model.cardinality = 10;
    p.model.groups = 6;
    p.model.experts = 5;
    p.model.expert_hidden = 8;
    p.model.embed_hidden = 12;
    p.model.token_embed_dim = 8;
    p.model.channel = ChannelConfig{2, 8};

    p.stage1.epochs = 60;
    p.stage1.batch_size = 64;
    p.stage2.epochs = 150;
    p.stage2.batch_size = 64;
    p.etl_target_cardinalities = {10, 14};
    return p;
}

Profile desk_small_profile() {
    Profile p;
    p.name = "desk-small";
    p.attribute_count = 4;
    p.cardinality = 20;
    p.problems_per_combo = 2;  // 4096 combos -> 4096 train + 4096 test
    p.pretrain_cases = 2000;
    p.joint = joint_registry();
    p.pretrain = pretrain_registry();
    p.has_generalization_splits = true;

    p.model.attribute_count = 4;
    p.model.cardinality = 20;
    p.model.groups = 16;
    p.model.experts = 5;
    p.model.expert_hidden = 12;
    p.model.embed_hidden = 24;
    p.model.token_embed_dim = 12;
    p.model.channel = ChannelConfig{4, 15};

    p.stage1.epochs = 40;
    p.stage1.batch_size = 64;
    p.stage2.epochs = 80;
    p.stage2.batch_size = 64;
    p.etl_target_cardinalities = {20, 30};
    return p;
}

Profile full_profile(int cardinality) {
    int groups = 0;
    switch (cardinality) {
        case 20: groups = 80; break;
        case 30: groups = 120; break;
        case 40: groups = 160; break;
        case 80: groups = 240; break;
        default:
            throw std::invalid_argument("full profile: cardinality must be 20/30/40/80");
    }
    Profile p;
    p.name = "full-n" + std::to_string(cardinality);
    p.attribute_count = 4;
    p.cardinality = cardinality;
    p.problems_per_combo = 20;  // 4096 combos -> 81920 problems
    p.pretrain_cases = 2000;
    p.joint = joint_registry();
    p.pretrain = pretrain_registry();
    p.has_generalization_splits = true;

    p.model.attribute_count = 4;
    p.model.cardinality = cardinality;
    p.model.groups = groups;
    p.model.experts = 5;
    p.model.expert_hidden = 32;
    p.model.embed_hidden = 2 * groups;
    p.model.token_embed_dim = 32;
    p.model.channel = ChannelConfig{4, 15};

    p.stage1.epochs = 100;
    p.stage1.batch_size = 512;
    p.stage2.epochs = 500;
    p.stage2.batch_size = 512;
    for (int n : {20, 30, 40, 80})
        if (n != cardinality) p.etl_target_cardinalities.push_back(n);
    return p;
}

std::optional<Profile> profile_by_name(const std::string& name) {
    if (name == "desk-tiny") return desk_tiny_profile();
    if (name == "desk-small") return desk_small_profile();
    if (name == "full-n20") return full_profile(20);
    if (name == "full-n30") return full_profile(30);
    if (name == "full-n40") return full_profile(40);
    if (name == "full-n80") return full_profile(80);
    return std::nullopt;
}

std::vector<std::string> profile_names() {
    return {"desk-tiny", "desk-small", "full-n20", "full-n30", "full-n40", "full-n80"};
}

}  // namespace rgame
