#pragma once

#include <string>

#include "spaqr/pipeline.h"

namespace spaqr {

// Serialize one run as pretty-printed JSON: matrix shape, options, per-stage
// phase timings with interface-size and aspect-ratio quartiles, totals, and
// the solve outcome. The document shape is documented in
// docs/profile.schema.json and checked by validate_profile.
std::string make_profile(const Pipeline& p, const SolveReport* rep);

// Structural validation mirroring docs/profile.schema.json: required fields,
// types, non-negative phase times, all five phases at every level. Returns an
// empty string when valid, else a description of the first problem found.
std::string validate_profile(const std::string& text);

}  // namespace spaqr
