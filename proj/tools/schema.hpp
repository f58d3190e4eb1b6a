#pragma once

#include <nlohmann/json.hpp>

#include <string>

namespace linfdt::cli {

/// Checks `doc` against the subset of JSON Schema used by the published
/// schemas: type, const, enum, required, properties, items, minItems,
/// maxItems, minimum, maximum, exclusiveMinimum. Throws SchemaViolation
/// naming the first offending JSON pointer.
void validate_schema(const nlohmann::json& doc, const nlohmann::json& schema, const std::string& what);

const nlohmann::json& run_manifest_schema();
const nlohmann::json& report_bundle_schema();

}  // namespace linfdt::cli
