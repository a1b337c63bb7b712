#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "helpers.hpp"
#include "svec/micro_model.hpp"
#include "svec/steering.hpp"
#include "svec/util.hpp"

using namespace svec;

namespace {

PersonaVector vector_of(std::vector<float> components, const std::string& trait = "evil",
                        int layer = 2, const std::string& backbone = "bb") {
    PersonaVector v;
    v.trait = trait;
    v.layer = layer;
    v.components = std::move(components);
    v.n_positive = 1;
    v.n_negative = 1;
    v.backbone_id = backbone;
    return v;
}

}  // namespace

TEST_CASE("make_intervention scales by the signed coefficient") {
    const PersonaVector v = vector_of({0.5f, 0.0f});
    SteeringConfig toward{"evil", SteerDirection::toward_trait, 2.0, 2};
    const InterventionHandle pos = make_intervention(v, toward, "bb");
    CHECK(pos.layer == 2);
    CHECK(pos.delta[0] == doctest::Approx(1.0));
    CHECK(pos.delta[1] == doctest::Approx(0.0));

    SteeringConfig away{"evil", SteerDirection::toward_opposite, 2.0, 2};
    const InterventionHandle neg = make_intervention(v, away, "bb");
    CHECK(neg.delta[0] == doctest::Approx(-1.0));

    SteeringConfig none{"anything", SteerDirection::unsteered, 2.0, 2};
    const InterventionHandle zero = make_intervention(v, none, "bb");
    for (float d : zero.delta) CHECK(d == 0.0f);
}

TEST_CASE("opposite directions cancel exactly") {
    Rng rng(33);
    std::vector<float> comps(64);
    for (auto& c : comps) c = static_cast<float>(rng.next_gaussian());
    const PersonaVector v = vector_of(comps);
    SteeringConfig toward{"evil", SteerDirection::toward_trait, 2.0, 2};
    SteeringConfig away{"evil", SteerDirection::toward_opposite, 2.0, 2};
    const auto a = make_intervention(v, toward, "bb");
    const auto b = make_intervention(v, away, "bb");
    for (size_t i = 0; i < a.delta.size(); ++i) CHECK(a.delta[i] + b.delta[i] == 0.0f);
}

TEST_CASE("make_intervention validates trait, layer and backbone") {
    const PersonaVector v = vector_of({1.0f, 2.0f});
    SteeringConfig wrong_trait{"humorous", SteerDirection::toward_trait, 2.0, 2};
    CHECK_THROWS_AS(make_intervention(v, wrong_trait, "bb"), ConfigMismatchError);
    SteeringConfig wrong_layer{"evil", SteerDirection::toward_trait, 2.0, 3};
    CHECK_THROWS_AS(make_intervention(v, wrong_layer, "bb"), ConfigMismatchError);
    SteeringConfig ok{"evil", SteerDirection::toward_trait, 2.0, 2};
    CHECK_THROWS_AS(make_intervention(v, ok, "other-backbone"), ConfigMismatchError);
    CHECK_NOTHROW(make_intervention(v, ok, "bb"));
    CHECK_NOTHROW(make_intervention(v, ok, ""));  // unknown target skips the check
    SteeringConfig negative_mag{"evil", SteerDirection::toward_trait, -1.0, 2};
    CHECK_THROWS_AS(make_intervention(v, negative_mag, "bb"), ValidationError);
}

TEST_CASE("configuration enumeration is canonical") {
    const auto traits = builtin_traits();
    const auto configs = enumerate_configurations(traits, 2.0, 2);
    REQUIRE(configs.size() == 15);  // seven traits: baseline + 14 steered
    CHECK(configuration_id(configs[0]) == "baseline");
    CHECK(configuration_id(configs[1]) == "evil_pos");
    CHECK(configuration_id(configs[2]) == "evil_neg");
    CHECK(configuration_id(configs[13]) == "sycophantic_pos");
    CHECK(configuration_id(configs[14]) == "sycophantic_neg");
    for (const auto& c : configs) {
        CHECK(c.coefficient_magnitude == 2.0);
        CHECK(c.layer == 2);
    }
    CHECK(configs[0].alpha() == 0.0);
    CHECK(configs[1].alpha() == 2.0);
    CHECK(configs[2].alpha() == -2.0);

    // pure function: identical call, identical order
    const auto again = enumerate_configurations(traits, 2.0, 2);
    for (size_t i = 0; i < configs.size(); ++i) {
        CHECK(configuration_id(configs[i]) == configuration_id(again[i]));
    }

    std::vector<TraitSpec> one = {traits[0]};
    CHECK(enumerate_configurations(one, 2.0, 2).size() == 3);
    CHECK_THROWS_AS(enumerate_configurations({}, 2.0, 2), EmptyInputError);
    std::vector<TraitSpec> dup = {traits[0], traits[0]};
    CHECK_THROWS_AS(enumerate_configurations(dup, 2.0, 2), ValidationError);
}

TEST_CASE("steer direction names round-trip") {
    CHECK(steer_direction_from_name("pos") == SteerDirection::toward_trait);
    CHECK(steer_direction_from_name("neg") == SteerDirection::toward_opposite);
    CHECK(steer_direction_from_name("none") == SteerDirection::unsteered);
    CHECK_THROWS_AS(steer_direction_from_name("sideways"), ValidationError);
}

TEST_CASE("mean projection is monotone nondecreasing in alpha on fixed prompts") {
    const MicroModel model = MicroModel::trait_fixture(svec::testing::kFixtureSeed);
    const int layer = midpoint_layer(model.descriptor());

    TraitSpec trait = svec::testing::toy_style_trait();
    trait.elicit_questions.resize(3);
    CorpusGenConfig cg;
    cg.max_new_tokens = 16;
    cg.temperature = 0.0;
    cg.seed = 7;
    cg.allow_eos = false;
    auto records = build_contrastive_corpus(model, trait, cg);
    svec::testing::score_with_style_judge(records);
    const auto kept = filter_corpus(records, 50);
    REQUIRE(!kept.empty());
    const PersonaVector v =
        extract_from_records(model, kept, {layer}, PoolingMode::response_average).at(layer);

    SteeringConfig toward{trait.name, SteerDirection::toward_trait, 2.0, layer};
    SteeringConfig away{trait.name, SteerDirection::toward_opposite, 2.0, layer};
    const auto hp = make_intervention(v, toward, model.descriptor().model_id);
    const auto hn = make_intervention(v, away, model.descriptor().model_id);

    const double nv = norm(v.components);
    REQUIRE(nv > 0.0);
    for (int pi = 0; pi < 5; ++pi) {
        const TokenSequence prompt =
            make_prompt_sequence(svec::testing::held_out_prompts()[static_cast<size_t>(pi)]);
        GenerationConfig gen;
        gen.max_new_tokens = 16;
        gen.temperature = 0.0;
        gen.suppress_tokens = {tok::kBos, tok::kSep, tok::kEos};
        double last = 0.0;
        bool first = true;
        for (const auto& handles : {std::vector<InterventionHandle>{hn},
                                    std::vector<InterventionHandle>{},
                                    std::vector<InterventionHandle>{hp}}) {
            const TokenSequence out = model.generate(prompt, gen, handles);
            const ForwardResult fr = model.forward_with_taps(out, {layer}, handles);
            const ActivationTrace& trace = fr.traces[0];
            double acc = 0.0;
            size_t count = 0;
            for (size_t p = out.spans.response_begin; p < out.spans.response_end; ++p) {
                if (out.special[p]) continue;
                acc += dot(trace.at(p), v.components) / nv;
                ++count;
            }
            const double proj = acc / static_cast<double>(count);
            if (!first) CHECK(proj >= last);
            last = proj;
            first = false;
        }
    }
}
