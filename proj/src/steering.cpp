#include "svec/steering.hpp"

#include <set>

#include "svec/errors.hpp"
#include "svec/util.hpp"

namespace svec {

const char* steer_direction_name(SteerDirection d) {
    switch (d) {
        case SteerDirection::toward_trait: return "pos";
        case SteerDirection::toward_opposite: return "neg";
        case SteerDirection::unsteered: return "none";
    }
    return "none";
}

SteerDirection steer_direction_from_name(std::string_view name) {
    if (name == "pos" || name == "toward_trait") return SteerDirection::toward_trait;
    if (name == "neg" || name == "toward_opposite") return SteerDirection::toward_opposite;
    if (name == "none" || name == "unsteered") return SteerDirection::unsteered;
    throw ValidationError("unknown steering direction: " + std::string(name));
}

ConfigurationId configuration_id(const SteeringConfig& config) {
    if (config.direction == SteerDirection::unsteered) return "baseline";
    return config.trait + "_" + steer_direction_name(config.direction);
}

InterventionHandle make_intervention(const PersonaVector& vector, const SteeringConfig& config,
                                     const std::string& target_backbone_id) {
    if (config.coefficient_magnitude < 0.0) {
        throw ValidationError("steering: coefficient magnitude must be nonnegative");
    }
    if (config.direction != SteerDirection::unsteered) {
        if (vector.trait != config.trait) {
            throw ConfigMismatchError("steering: vector trait '" + vector.trait +
                                      "' != config trait '" + config.trait + "'");
        }
        if (vector.layer != config.layer) {
            throw ConfigMismatchError("steering: vector layer " + std::to_string(vector.layer) +
                                      " != config layer " + std::to_string(config.layer));
        }
        if (!target_backbone_id.empty() && vector.backbone_id != target_backbone_id) {
            throw ConfigMismatchError("steering: vector was extracted on '" + vector.backbone_id +
                                      "', target backbone is '" + target_backbone_id + "'");
        }
    }
    InterventionHandle handle;
    handle.layer = config.layer;
    handle.delta.resize(vector.components.size());
    const double alpha = config.alpha();
    for (size_t i = 0; i < vector.components.size(); ++i) {
        handle.delta[i] = static_cast<float>(alpha * static_cast<double>(vector.components[i]));
    }
    if (!all_finite(handle.delta)) {
        throw ValidationError("steering: non-finite delta");
    }
    return handle;
}

std::vector<SteeringConfig> enumerate_configurations(const std::vector<TraitSpec>& traits,
                                                     double magnitude, int layer) {
    if (traits.empty()) throw EmptyInputError("enumerate_configurations: empty trait list");
    std::set<std::string> seen;
    for (const auto& t : traits) {
        if (!seen.insert(t.name).second) {
            throw ValidationError("enumerate_configurations: duplicate trait name '" + t.name +
                                  "'");
        }
    }
    std::vector<SteeringConfig> out;
    out.reserve(1 + 2 * traits.size());
    out.push_back(SteeringConfig{"", SteerDirection::unsteered, magnitude, layer});
    for (const auto& t : traits) {
        out.push_back(SteeringConfig{t.name, SteerDirection::toward_trait, magnitude, layer});
        out.push_back(SteeringConfig{t.name, SteerDirection::toward_opposite, magnitude, layer});
    }
    return out;
}

}  // namespace svec
