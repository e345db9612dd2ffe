#pragma once

// JSON (de)serialization for configs, results and reports. Parsers reject
// unknown keys and out-of-range values with Validation errors.

#include <json.hpp>

#include "anatomatch/embedder.hpp"
#include "anatomatch/fixed_point.hpp"
#include "anatomatch/metrics.hpp"
#include "anatomatch/phantom.hpp"

namespace anatomatch {

using nlohmann::json;

json to_json(const VoxelPoint& p);
json to_json(const PhysPoint& p);
PhysPoint phys_from_json(const json& j, const char* what);
VoxelPoint voxel_from_json(const json& j, const char* what);

json to_json(const MatcherConfig& c);
MatcherConfig matcher_config_from_json(const json& j);

json to_json(const MatchResult& r, const Spacing& query_spacing);

json to_json(const PhantomConfig& c);
PhantomConfig phantom_config_from_json(const json& j, PhantomConfig base = {});

json to_json(const AugmentParams& p);
AugmentParams augment_params_from_json(const json& j);
json to_json(const AugmentRanges& r);
AugmentRanges augment_ranges_from_json(const json& j, AugmentRanges base = {});

json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const json& j);

json to_json(const Structure& s);

// {"pairs":[{"id","template","truth_query","radius_mm","tag"}], "transform":{...}}
json correspondence_json(const CorrespondenceSet& set, const TruthMap& truth);

json to_json(const EvalSummary& s);

// Records from a predictions document and a correspondence document, joined on id.
std::vector<EvalRecord> join_predictions(const json& predictions, const json& truth);

// Throws Validation listing any key of j not in allowed.
void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* what);

}  // namespace anatomatch
