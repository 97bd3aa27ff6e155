#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>

#include "rgame/agents.hpp"
#include "rgame/profiles.hpp"

using namespace rgame;
using ad::Parameter;
using ad::Tape;
using ad::Var;

namespace {

// Dimensions small enough that finite differences over every weight stay fast.
ModelConfig tiny_model() {
    ModelConfig m;
    m.attribute_count = 2;
    m.cardinality = 10;
    m.groups = 2;
    m.experts = 5;
    m.expert_hidden = 3;
    m.embed_hidden = 4;
    m.token_embed_dim = 3;
    m.channel = ChannelConfig{2, 4};
    return m;
}

std::vector<Problem> desk_problems(int count, std::uint64_t seed) {
    const Profile prof = desk_tiny_profile();
    const ProblemGenerator gen(prof.main_generator());
    const std::vector<RuleVector> combos = all_rule_vectors(prof.joint, 2);
    std::vector<Problem> out;
    for (int i = 0; i < count; ++i)
        out.push_back(gen.generate_problem(
            combos[static_cast<std::size_t>(i) % combos.size()],
            derive_seed(seed, {static_cast<std::uint64_t>(i)})));
    return out;
}

std::vector<Problem> pretrain_problems(int count, std::uint64_t seed) {
    const Profile prof = desk_tiny_profile();
    const ProblemGenerator gen(prof.pretrain_generator());
    const std::vector<RuleVector> combos = all_rule_vectors(prof.pretrain, 2);
    std::vector<Problem> out;
    for (int i = 0; i < count; ++i)
        out.push_back(gen.generate_problem(
            combos[static_cast<std::size_t>(i) % combos.size()],
            derive_seed(seed, {static_cast<std::uint64_t>(i)})));
    return out;
}

double max_grad_error(const std::function<Var(Tape&)>& make_loss,
                      const std::vector<Parameter*>& params) {
    Tape tape;
    for (Parameter* p : params) p->zero_grad();
    tape.backward(make_loss(tape));
    std::vector<std::vector<double>> analytic;
    for (Parameter* p : params) analytic.push_back(p->grad.data);

    const double h = 1e-6;
    double worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Parameter& p = *params[pi];
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double saved = p.value[i];
            p.value[i] = saved + h;
            Tape up_tape;
            const double up = make_loss(up_tape).value()[0];
            p.value[i] = saved - h;
            Tape dn_tape;
            const double dn = make_loss(dn_tape).value()[0];
            p.value[i] = saved;
            const double fd = (up - dn) / (2.0 * h);
            const double a = analytic[pi][i];
            worst = std::max(worst, std::abs(a - fd) /
                                        std::max(std::abs(a) + std::abs(fd), 1e-2));
        }
    }
    return worst;
}

std::uint64_t hash_of(const std::vector<Parameter*>& params) {
    return ad::parameter_hash(params);
}

}  // namespace

TEST_CASE("codebook encodes rule vectors by registry position") {
    const Profile prof = desk_tiny_profile();
    const OracleCodebook code = prof.joint_codebook();

    CHECK(code.encode(RuleVector{{{RuleKind::add}, {RuleKind::minus}}}) ==
          Message{{0, 1}});
    CHECK(code.encode(RuleVector{{{RuleKind::max}, {RuleKind::min}}}) ==
          Message{{3, 2}});

    for (const RuleVector& rv : all_rule_vectors(prof.joint, 2)) {
        const auto back = code.decode(code.encode(rv));
        REQUIRE(back.has_value());
        CHECK(*back == rv);
    }

    // Content tokens past the registry, short messages, and the blocked
    // constant have no reading.
    CHECK_FALSE(code.decode(Message{{0, 7}}).has_value());
    CHECK_FALSE(code.decode(Message{{0}}).has_value());
    CHECK_FALSE(code.decode(blocked_message(prof.model.channel)).has_value());

    CHECK_THROWS_AS(code.encode(RuleVector{{{RuleKind::add}}}), std::invalid_argument);
    CHECK_THROWS_AS(code.encode(RuleVector{{{RuleKind::constant}, {RuleKind::add}}}),
                    std::invalid_argument);

    // A channel too small for the registry or attribute count is rejected.
    CHECK_THROWS_AS(OracleCodebook(joint_registry(), ChannelConfig{4, 7}),
                    std::invalid_argument);
    CHECK_THROWS_AS(OracleCodebook(desk_joint_registry(), ChannelConfig{1, 8}),
                    std::invalid_argument);
}

TEST_CASE("oracle speaker recovers the hidden rule vector") {
    const Profile prof = desk_tiny_profile();
    OracleSpeaker speaker(prof.joint_codebook());
    for (const Problem& p : desk_problems(32, 5)) {
        CHECK(speaker.extract_rules(p.contexts) == p.rule_vector);
        Rng rng(1);
        CHECK(speaker.speak(SpeakerView{p.contexts}, EpisodeMode::greedy, rng) ==
              prof.joint_codebook().encode(p.rule_vector));
    }
}

TEST_CASE("ambiguous contexts are refused rather than guessed") {
    // Per attribute, both rows are (2,1,1): minus and min both fit, and two
    // identical rows cannot separate them.
    std::vector<Panel> contexts(6);
    for (auto& p : contexts) p.values = {2, 1};
    contexts[1].values = {1, 1};
    contexts[2].values = {1, 1};
    contexts[4].values = {1, 1};
    contexts[5].values = {1, 1};

    OracleSpeaker speaker(desk_tiny_profile().joint_codebook());
    CHECK_THROWS_AS(speaker.extract_rules(contexts), RuleExtractionAmbiguous);
}

TEST_CASE("oracle listener answers from the decoded rules") {
    const Profile prof = desk_tiny_profile();
    const OracleCodebook code = prof.joint_codebook();
    OracleListener listener(code);
    const Problem p = desk_problems(1, 99).front();
    Rng rng(2);

    const Message good = code.encode(p.rule_vector);
    const ListenerDecision d = listener.listen(
        ListenerView{good, p.questions, p.candidates}, EpisodeMode::greedy, rng);
    CHECK(d.prediction == p.target_index);
    CHECK(d.scores[static_cast<std::size_t>(p.target_index)] ==
          *std::max_element(d.scores.begin(), d.scores.end()));

    const Message blocked = blocked_message(prof.model.channel);
    const ListenerDecision u = listener.listen(
        ListenerView{blocked, p.questions, p.candidates}, EpisodeMode::greedy, rng);
    for (double s : u.scores) CHECK(s == doctest::Approx(1.0 / 8.0));
}

TEST_CASE("model config dimensions") {
    ModelConfig m = tiny_model();
    CHECK(m.rule_embed_dim() == 10);
    CHECK_NOTHROW(m.validate());
    m.groups = 0;
    CHECK_THROWS_AS(m.validate(), std::invalid_argument);
}

TEST_CASE("parameter names are unique and stage boundaries are respected") {
    Rng rng(11);
    SpeakerParams sp(tiny_model(), rng);
    ListenerParams lp(tiny_model(), rng);

    std::set<std::string> names;
    for (Parameter* p : sp.params()) names.insert(p->name);
    CHECK(names.size() == sp.params().size());
    names.clear();
    for (Parameter* p : lp.params()) names.insert(p->name);
    CHECK(names.size() == lp.params().size());

    // The carried set is exactly the encoder and reasoning weights.
    const auto fg = sp.fg_params();
    const std::set<Parameter*> all(sp.params().begin(), sp.params().end());
    for (Parameter* p : fg) CHECK(all.count(p) == 1);
    CHECK(fg.size() == sp.f.params().size() + sp.g.params().size());
}

TEST_CASE("resetting the message head keeps the reasoning stack") {
    Rng rng(21);
    SpeakerParams sp(tiny_model(), rng);
    const std::uint64_t fg_before = hash_of(sp.fg_params());
    const std::uint64_t all_before = hash_of(sp.params());

    ChannelConfig wider{4, 8};
    sp.reset_message_head(wider, rng);
    CHECK(hash_of(sp.fg_params()) == fg_before);
    CHECK(hash_of(sp.params()) != all_before);
    CHECK(sp.cfg.channel == wider);
    CHECK(sp.q_w.value.rows() == 9);  // content tokens plus the end token
    CHECK(sp.token_embed.value.rows() == 10);

    // The new head must still produce legal messages for the new channel.
    const Problem p = desk_problems(1, 3).front();
    Tape tape;
    Rng eval(4);
    const SpeakerRollout r = speak_graph(tape, sp, p.contexts, EpisodeMode::sampled, eval);
    CHECK_NOTHROW(validate_message(r.message, wider));
}

TEST_CASE("speaker graph emits well-formed reproducible messages") {
    Rng init(31);
    SpeakerParams sp(tiny_model(), init);
    const auto problems = desk_problems(24, 17);

    for (const Problem& p : problems) {
        Tape tape;
        Rng rng(derive_seed(60, {static_cast<std::uint64_t>(p.seed)}));
        const SpeakerRollout r = speak_graph(tape, sp, p.contexts, EpisodeMode::sampled, rng);
        CHECK_NOTHROW(validate_message(r.message, sp.cfg.channel));
        REQUIRE(r.token_logps.size() == r.entropies.size());
        CHECK(r.token_logps.size() >= r.message.size());
        for (const Var& lp : r.token_logps) CHECK(lp.value()[0] <= 0.0);
        for (const Var& e : r.entropies) CHECK(e.value()[0] >= 0.0);

        // Same seed, same draw; greedy needs no randomness at all.
        Tape t2;
        Rng rng2(derive_seed(60, {static_cast<std::uint64_t>(p.seed)}));
        CHECK(speak_graph(t2, sp, p.contexts, EpisodeMode::sampled, rng2).message ==
              r.message);
        Tape t3, t4;
        Rng g1(1), g2(2);
        CHECK(speak_graph(t3, sp, p.contexts, EpisodeMode::greedy, g1).message ==
              speak_graph(t4, sp, p.contexts, EpisodeMode::greedy, g2).message);
    }
}

TEST_CASE("listener graph scores all candidates as a distribution") {
    Rng init(41);
    ListenerParams lp(tiny_model(), init);
    const Problem p = desk_problems(1, 23).front();
    const Message m{{1, 3}};
    Tape tape;
    Rng rng(5);
    const ListenerRollout r =
        listen_graph(tape, lp, m, p.questions, p.candidates, EpisodeMode::greedy, rng);
    REQUIRE(r.scores.size() == 8);
    double total = 0.0;
    for (double s : r.scores) total += s;
    CHECK(total == doctest::Approx(1.0));
    CHECK(r.prediction ==
          static_cast<int>(std::max_element(r.scores.begin(), r.scores.end()) -
                           r.scores.begin()));
    CHECK(r.logp.value()[0] ==
          doctest::Approx(std::log(r.scores[static_cast<std::size_t>(r.prediction)])));

    // The blocked constant flows through the wire unchanged.
    Tape t2;
    const ListenerRollout b =
        listen_graph(t2, lp, blocked_message(lp.cfg.channel), p.questions, p.candidates,
                     EpisodeMode::greedy, rng);
    CHECK(b.scores.size() == 8);

    Message bad{{9, 1}};
    Tape t3;
    CHECK_THROWS_AS(
        listen_graph(t3, lp, bad, p.questions, p.candidates, EpisodeMode::greedy, rng),
        ChannelViolation);
}

TEST_CASE("speaker graph gradients match finite differences") {
    Rng init(51);
    SpeakerParams sp(tiny_model(), init);
    const Problem p = desk_problems(1, 29).front();

    auto loss = [&](Tape& t) {
        Rng rng(0);  // greedy draws nothing
        const SpeakerRollout r = speak_graph(t, sp, p.contexts, EpisodeMode::greedy, rng);
        Var acc = t.constant(0.0);
        for (const Var& l : r.token_logps) acc = t.add(acc, l);
        for (const Var& e : r.entropies) acc = t.add(acc, t.scale(e, 0.5));
        return acc;
    };
    CHECK(max_grad_error(loss, sp.params()) < 1e-4);
}

TEST_CASE("listener graph gradients match finite differences") {
    Rng init(61);
    ListenerParams lp(tiny_model(), init);
    const Problem p = desk_problems(1, 37).front();
    const Message m{{2, 0}};

    auto loss = [&](Tape& t) {
        Rng rng(0);
        return listen_graph(t, lp, m, p.questions, p.candidates, EpisodeMode::greedy, rng)
            .logp;
    };
    CHECK(max_grad_error(loss, lp.params()) < 1e-4);
}

TEST_CASE("reward baseline tracks the running mean") {
    RewardBaseline b;
    CHECK(b.value() == 0.0);
    b.observe(1.0);
    CHECK(b.value() == 1.0);
    b.observe(0.0);
    CHECK(b.value() == 0.5);
    b.observe(1.0);
    CHECK(b.value() == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("untrained pairs sit near the chance floor") {
    Rng init(71);
    const Profile prof = desk_tiny_profile();
    SpeakerParams sp(prof.model, init);
    ListenerParams lp(prof.model, init);
    const auto problems = desk_problems(256, 41);
    const double acc = evaluate_pair(sp, lp, problems, 9);
    CHECK(acc > 0.02);
    CHECK(acc < 0.30);  // 1/8 plus generous sampling slack
    CHECK(evaluate_pair(sp, lp, problems, 9) == acc);
}

TEST_CASE("stage one aligns speaker tokens with the codebook") {
    Rng init(81);
    const Profile prof = desk_tiny_profile();
    SpeakerParams sp(prof.model, init);
    const OracleCodebook code = prof.pretrain_codebook();
    const auto problems = pretrain_problems(64, 47);

    TrainConfig cfg;
    cfg.epochs = 25;
    cfg.batch_size = 32;
    cfg.seed = 7;
    const TrainingCurve curve = pretrain_speaker(sp, code, problems, cfg);
    REQUIRE(curve.size() == 25);
    CHECK(curve.front().epoch == 1);
    CHECK(curve.back().epoch == 25);
    CHECK(curve.back().train_acc > curve.front().train_acc);
    CHECK(curve.back().train_acc > 0.5);

    // Greedy emissions now match the codebook on most training problems.
    int hits = 0;
    for (const Problem& p : problems) {
        Tape tape;
        Rng rng(1);
        const Message m =
            speak_graph(tape, sp, p.contexts, EpisodeMode::greedy, rng).message;
        hits += m == code.encode(p.rule_vector) ? 1 : 0;
    }
    CHECK(hits > 32);
}

TEST_CASE("stage one training is deterministic in the seed") {
    const Profile prof = desk_tiny_profile();
    const auto problems = pretrain_problems(32, 53);
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 16;
    cfg.seed = 3;

    auto run = [&]() {
        Rng init(91);
        SpeakerParams sp(prof.model, init);
        TrainingCurve c = pretrain_speaker(sp, prof.pretrain_codebook(), problems, cfg);
        return std::pair(c.back().train_acc, hash_of(sp.params()));
    };
    const auto [acc1, h1] = run();
    const auto [acc2, h2] = run();
    CHECK(acc1 == acc2);
    CHECK(h1 == h2);
}

TEST_CASE("blocked training updates the listener only") {
    Rng init(101);
    const Profile prof = desk_tiny_profile();
    ListenerParams lp(prof.model, init);
    const auto problems = desk_problems(64, 59);

    TrainConfig cfg;
    cfg.epochs = 6;
    cfg.batch_size = 32;
    cfg.seed = 11;
    const std::uint64_t before = hash_of(lp.params());
    const TrainingCurve curve = train_listener_blocked(lp, problems, cfg);
    REQUIRE(curve.size() == 6);
    CHECK(hash_of(lp.params()) != before);
    for (const EpochStats& s : curve) {
        CHECK(s.train_acc >= 0.0);
        CHECK(s.train_acc <= 1.0);
    }
    const double acc = evaluate_listener_blocked(lp, problems, 13);
    CHECK(acc >= 0.0);
    CHECK(evaluate_listener_blocked(lp, problems, 13) == acc);
}

TEST_CASE("joint training moves both agents and logs entropy") {
    Rng init(111);
    const Profile prof = desk_tiny_profile();
    SpeakerParams sp(prof.model, init);
    ListenerParams lp(prof.model, init);
    const auto problems = desk_problems(64, 61);

    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.batch_size = 32;
    cfg.seed = 17;
    const std::uint64_t sp_before = hash_of(sp.params());
    const std::uint64_t lp_before = hash_of(lp.params());
    const TrainingCurve curve = joint_train(sp, lp, problems, cfg);
    REQUIRE(curve.size() == 5);
    CHECK(hash_of(sp.params()) != sp_before);
    CHECK(hash_of(lp.params()) != lp_before);
    for (const EpochStats& s : curve) CHECK(s.entropy_mean >= 0.0);

    SUBCASE("blocked joint training never touches the speaker") {
        const std::uint64_t sp_now = hash_of(sp.params());
        joint_train(sp, lp, problems, cfg, /*blocked=*/true);
        CHECK(hash_of(sp.params()) == sp_now);
    }
}

TEST_CASE("listener learns from externally scripted messages") {
    Rng init(121);
    const Profile prof = desk_tiny_profile();
    ListenerParams lp(prof.model, init);
    const OracleCodebook code = prof.joint_codebook();
    const auto problems = desk_problems(64, 67);
    std::vector<Message> messages;
    for (const Problem& p : problems) messages.push_back(code.encode(p.rule_vector));

    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.batch_size = 32;
    cfg.seed = 19;
    const TrainingCurve curve = train_listener_on_messages(lp, problems, messages, cfg);
    REQUIRE(curve.size() == 30);
    const double mapped = evaluate_listener_on_messages(lp, problems, messages, 23);
    CHECK(mapped > 0.125);
    CHECK(curve.back().train_acc > curve.front().train_acc);

    CHECK_THROWS_AS(
        train_listener_on_messages(lp, problems, std::vector<Message>{}, cfg),
        std::invalid_argument);
}
