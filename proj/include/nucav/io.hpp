#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "nucav/calibrate.hpp"
#include "nucav/domain.hpp"
#include "nucav/parratt.hpp"
#include "nucav/qomodel.hpp"
#include "nucav/spectrum.hpp"

namespace nucav::io {

using json = nlohmann::json;

/// --- serialization (exposed for tests and hashing) ---------------------

json to_json(const CavityStack& stack);
CavityStack stack_from_json(const json& j);

json to_json(const qo::QoModel& model, const std::string& name = "");
qo::QoModel model_from_json(const json& j);

json to_json(const cal::FitReport& report);
json to_json(const Spectrum& sp, const std::string& manifest_ref);

/// --- files --------------------------------------------------------------

CavityStack read_stack(const std::string& path);
qo::QoModel read_params(const std::string& path);
void write_params(const qo::QoModel& model, const std::string& path,
                  const std::string& name = "");
void write_fit_report(const cal::FitReport& report, const std::string& path);
void write_pipeline_report(const cal::PipelineResult& result, const std::string& path);

/// Spectrum writers: CSV columns theta_rad, delta_gamma, re_R, im_R, abs2_R
/// with a provenance comment header, or an equivalent JSON document.
void write_spectrum_csv(const Spectrum& sp, const std::string& path,
                        const std::string& manifest_ref);
void write_spectrum_json(const Spectrum& sp, const std::string& path,
                         const std::string& manifest_ref);

/// Field map writer: depth_nm, re_E, im_E, intensity.
void write_field_csv(const parratt::FieldMap& fm, const std::string& path,
                     const std::string& manifest_ref);

/// Run provenance sidecar written next to every data file.
struct Manifest {
    std::string command;
    std::vector<std::string> inputs;
    std::string params_hash;
    std::string engine_version;
    std::string timestamp;  ///< ISO-8601 UTC
    std::vector<std::string> outputs;
};

Manifest make_manifest(const std::string& command,
                       const std::vector<std::string>& inputs,
                       const std::string& params_hash,
                       const std::vector<std::string>& outputs);
void write_manifest(const Manifest& m, const std::string& path);

/// Stable FNV-1a content hash of a canonical JSON dump ("fnv1a:<16 hex>").
std::string content_hash(const json& j);
std::string params_hash(const CavityStack& stack);
std::string params_hash(const qo::QoModel& model);

} // namespace nucav::io
