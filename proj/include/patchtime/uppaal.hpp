#pragma once

#include "patchtime/pta.hpp"
#include "patchtime/smc.hpp"

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace patchtime {

/// Malformed XML, or a UPPAAL construct outside the chain-model subset.
class UppaalImportError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kTemplateName = "Process";

/// UPPAAL SMC document with one template, exponential-rate location labels,
/// branchpoints with probability weights and clock guards. Coordinates are
/// a deterministic left-to-right layout; identical input gives identical bytes.
std::string export_xml(const Pta& pta, std::span<const Query> queries);

/// One formula per probability query, UPPAAL .q convention.
std::string export_queries(std::span<const Query> queries);

/// Rebuilds the Pta; throws UppaalImportError naming unsupported features
/// (channel, invariant, synchronisation, urgent, committed, ...) or the
/// violated model invariants.
Pta import_xml(const std::string& xml);

} // namespace patchtime
