#include "schema.hpp"

#include "linfdt/error.hpp"
#include "schemas_embedded.hpp"

#include <algorithm>

namespace linfdt::cli {

namespace {

bool has_type(const nlohmann::json& v, const std::string& type) {
  if (type == "object") return v.is_object();
  if (type == "array") return v.is_array();
  if (type == "string") return v.is_string();
  if (type == "boolean") return v.is_boolean();
  if (type == "null") return v.is_null();
  if (type == "number") return v.is_number();
  if (type == "integer") return v.is_number_integer();
  return false;
}

void check(const nlohmann::json& v, const nlohmann::json& s, const std::string& ptr, const std::string& what) {
  const auto fail = [&](const std::string& msg) {
    throw Error(ErrorCode::SchemaViolation, what + " at '" + (ptr.empty() ? "/" : ptr) + "': " + msg);
  };
  if (s.contains("type")) {
    const auto& t = s["type"];
    const bool ok = t.is_string() ? has_type(v, t.get<std::string>())
                                  : std::any_of(t.begin(), t.end(), [&](const auto& x) { return has_type(v, x.template get<std::string>()); });
    if (!ok) fail("expected type " + t.dump());
  }
  if (s.contains("const") && v != s["const"]) fail("expected " + s["const"].dump());
  if (s.contains("enum") && std::find(s["enum"].begin(), s["enum"].end(), v) == s["enum"].end()) {
    fail("value " + v.dump() + " not in " + s["enum"].dump());
  }
  if (v.is_number()) {
    const double x = v.get<double>();
    if (s.contains("minimum") && x < s["minimum"].get<double>()) fail("below minimum");
    if (s.contains("maximum") && x > s["maximum"].get<double>()) fail("above maximum");
    if (s.contains("exclusiveMinimum") && x <= s["exclusiveMinimum"].get<double>()) fail("not above exclusive minimum");
  }
  if (v.is_object()) {
    if (s.contains("required")) {
      for (const auto& key : s["required"]) {
        if (!v.contains(key.get<std::string>())) fail("missing required key '" + key.get<std::string>() + "'");
      }
    }
    if (s.contains("properties")) {
      for (const auto& [key, sub] : s["properties"].items()) {
        if (v.contains(key)) check(v[key], sub, ptr + "/" + key, what);
      }
    }
  }
  if (v.is_array()) {
    if (s.contains("minItems") && v.size() < s["minItems"].get<std::size_t>()) fail("too few items");
    if (s.contains("maxItems") && v.size() > s["maxItems"].get<std::size_t>()) fail("too many items");
    if (s.contains("items")) {
      for (std::size_t i = 0; i < v.size(); ++i) check(v[i], s["items"], ptr + "/" + std::to_string(i), what);
    }
  }
}

}  // namespace

void validate_schema(const nlohmann::json& doc, const nlohmann::json& schema, const std::string& what) {
  check(doc, schema, "", what);
}

const nlohmann::json& run_manifest_schema() {
  static const nlohmann::json s = nlohmann::json::parse(kRunManifestSchema);
  return s;
}

const nlohmann::json& report_bundle_schema() {
  static const nlohmann::json s = nlohmann::json::parse(kReportBundleSchema);
  return s;
}

}  // namespace linfdt::cli
