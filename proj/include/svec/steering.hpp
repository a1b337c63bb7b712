#pragma once

#include <string>
#include <vector>

#include "svec/extraction.hpp"

namespace svec {

enum class SteerDirection { toward_trait, toward_opposite, unsteered };

const char* steer_direction_name(SteerDirection d);
SteerDirection steer_direction_from_name(std::string_view name);

// Alpha is stored as (direction, magnitude) so reports can group by trait
// and direction; the signed coefficient is derived.
struct SteeringConfig {
    std::string trait;
    SteerDirection direction = SteerDirection::unsteered;
    double coefficient_magnitude = 2.0;
    int layer = 0;

    double alpha() const {
        switch (direction) {
            case SteerDirection::toward_trait: return coefficient_magnitude;
            case SteerDirection::toward_opposite: return -coefficient_magnitude;
            case SteerDirection::unsteered: return 0.0;
        }
        return 0.0;
    }
};

// Canonical key: "baseline", "<trait>_pos" or "<trait>_neg". These ids
// appear verbatim in persisted records and file names.
using ConfigurationId = std::string;

ConfigurationId configuration_id(const SteeringConfig& config);

// delta = alpha * components, validated against the vector's trait, layer
// and backbone. Unsteered configs yield a zero delta for any vector.
InterventionHandle make_intervention(const PersonaVector& vector, const SteeringConfig& config,
                                     const std::string& target_backbone_id);

// Baseline first, then two configs per trait in input order (positive before
// negative): 1 + 2 * |traits| total.
std::vector<SteeringConfig> enumerate_configurations(const std::vector<TraitSpec>& traits,
                                                     double magnitude, int layer);

}  // namespace svec
