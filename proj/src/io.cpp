#include "nucav/io.hpp"

#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include "nucav/version.hpp"

namespace nucav::io {

namespace {

json complex_to_json(const complexd& z) {
    return json{{"re", z.real()}, {"im", z.imag()}};
}

complexd complex_from_json(const json& j, const char* what) {
    if (j.is_number())
        return complexd(j.get<double>(), 0.0);
    if (j.is_array() && j.size() == 2)
        return complexd(j.at(0).get<double>(), j.at(1).get<double>());
    if (j.is_object() && j.contains("re"))
        return complexd(j.at("re").get<double>(), j.value("im", 0.0));
    throw InputError(std::string(what) + ": expected a complex value ({re, im}, [re, im] or number)");
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw InputError("cannot open '" + path + "' for writing");
    out << text;
    if (!out)
        throw InputError("write failed for '" + path + "'");
}

json parse_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw InputError("cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw InputError("cannot parse '" + path + "': " + e.what());
    }
}

} // namespace

json to_json(const CavityStack& stack) {
    json layers = json::array();
    for (const Layer& l : stack.layers) {
        json jl{{"material", l.material}, {"delta", l.delta}, {"beta", l.beta}};
        if (l.semi_infinite)
            jl["semi_infinite"] = true;
        else
            jl["thickness_nm"] = l.thickness_nm;
        if (l.nuclear) {
            jl["nuclear"] = json{{"strength", l.nuclear->strength},
                                 {"linewidth", l.nuclear->linewidth},
                                 {"delta_g", l.nuclear->delta_g},
                                 {"delta_e", l.nuclear->delta_e},
                                 {"magnetized", l.nuclear->magnetized}};
        }
        layers.push_back(std::move(jl));
    }
    return json{{"name", stack.name}, {"layers", std::move(layers)}};
}

CavityStack stack_from_json(const json& j) {
    try {
        CavityStack stack;
        stack.name = j.value("name", "");
        if (!j.contains("layers") || !j.at("layers").is_array())
            throw InputError("stack: missing 'layers' array");
        for (const json& jl : j.at("layers")) {
            Layer l;
            l.material = jl.value("material", "");
            l.semi_infinite = jl.value("semi_infinite", false);
            l.thickness_nm = jl.value("thickness_nm", 0.0);
            l.delta = jl.value("delta", 0.0);
            l.beta = jl.value("beta", 0.0);
            if (jl.contains("nuclear")) {
                const json& jn = jl.at("nuclear");
                NuclearSpec ns;
                ns.strength = jn.value("strength", 0.0);
                ns.linewidth = jn.value("linewidth", 1.0);
                ns.delta_g = jn.value("delta_g", 0.0);
                ns.delta_e = jn.value("delta_e", 0.0);
                ns.magnetized = jn.value("magnetized", false);
                l.nuclear = ns;
            }
            stack.layers.push_back(std::move(l));
        }
        stack.validate();
        return stack;
    } catch (const json::exception& e) {
        throw InputError(std::string("stack: ") + e.what());
    }
}

json to_json(const qo::QoModel& model, const std::string& name) {
    json modes = json::array();
    for (const qo::Mode& m : model.mp.modes)
        modes.push_back(json{{"theta0_mrad", m.theta0 * 1e3},
                             {"kappa_gamma", m.kappa},
                             {"kappaR_gamma", m.kappa_r}});
    json j{{"modes", std::move(modes)},
           {"r", complex_to_json(model.mp.r)},
           {"omega_gamma", model.mp.omega}};
    if (!name.empty())
        j["name"] = name;
    if (model.mp.envelope.enabled)
        j["envelope"] = json{{"delta", model.mp.envelope.delta},
                             {"beta", model.mp.envelope.beta}};
    if (model.mp.envelope_on_nuclear)
        j["envelope_on_nuclear"] = true;

    const qo::CouplingSet& cs = model.cs;
    json couplings;
    if (cs.has_decomposition) {
        json amps = json::array();
        for (Eigen::Index r = 0; r < cs.field_amps.rows(); ++r) {
            json row = json::array();
            for (Eigen::Index c = 0; c < cs.field_amps.cols(); ++c)
                row.push_back(complex_to_json(cs.field_amps(r, c)));
            amps.push_back(std::move(row));
        }
        couplings = json{{"field_amps", std::move(amps)}, {"scale_gamma", cs.scale}};
    } else {
        json mat = json::array();
        for (Eigen::Index r = 0; r < cs.g.rows(); ++r) {
            json row = json::array();
            for (Eigen::Index c = 0; c < cs.g.cols(); ++c)
                row.push_back(complex_to_json(cs.g(r, c)));
            mat.push_back(std::move(row));
        }
        couplings = json{{"matrix", std::move(mat)}};
    }
    j["couplings"] = std::move(couplings);

    // Hyperfine block only for six-line models; splittings are recovered from
    // the line positions (outer spread = delta_g + 3 delta_e, inner = delta_g + delta_e).
    if (model.transitions.size() == 6) {
        const double diff16 = model.transitions[5].delta_E - model.transitions[0].delta_E;
        const double diff25 = model.transitions[4].delta_E - model.transitions[1].delta_E;
        const double delta_e_val = 0.5 * (diff16 - diff25);
        const double delta_g_val = diff25 - delta_e_val;
        j["hyperfine"] = json{{"delta_g", delta_g_val},
                              {"delta_e", delta_e_val},
                              {"polarization", model.pol.in_overlap[0] == complexd(0.0)
                                                   ? "pi"
                                                   : "all"}};
    }
    return j;
}

qo::QoModel model_from_json(const json& j) {
    try {
        qo::QoModel model;
        if (!j.contains("modes") || !j.at("modes").is_array() || j.at("modes").empty())
            throw InputError("params: missing 'modes' array");
        for (const json& jm : j.at("modes")) {
            qo::Mode m;
            m.theta0 = jm.at("theta0_mrad").get<double>() * 1e-3;
            m.kappa = jm.at("kappa_gamma").get<double>();
            m.kappa_r = jm.at("kappaR_gamma").get<double>();
            model.mp.modes.push_back(m);
        }
        if (j.contains("r"))
            model.mp.r = complex_from_json(j.at("r"), "params.r");
        if (j.contains("omega_gamma"))
            model.mp.omega = j.at("omega_gamma").get<double>();
        if (j.contains("envelope")) {
            model.mp.envelope.enabled = true;
            model.mp.envelope.delta = j.at("envelope").value("delta", 0.0);
            model.mp.envelope.beta = j.at("envelope").value("beta", 0.0);
        }
        model.mp.envelope_on_nuclear = j.value("envelope_on_nuclear", false);

        if (!j.contains("couplings"))
            throw InputError("params: missing 'couplings'");
        const json& jc = j.at("couplings");
        const auto read_matrix = [](const json& rows, const char* what) {
            if (!rows.is_array() || rows.empty() || !rows.at(0).is_array())
                throw InputError(std::string(what) + ": expected an array of rows");
            const std::size_t nr = rows.size();
            const std::size_t nc = rows.at(0).size();
            Eigen::MatrixXcd m(nr, nc);
            for (std::size_t r = 0; r < nr; ++r) {
                if (rows.at(r).size() != nc)
                    throw InputError(std::string(what) + ": ragged rows");
                for (std::size_t c = 0; c < nc; ++c)
                    m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                        complex_from_json(rows.at(r).at(c), what);
            }
            return m;
        };
        if (jc.contains("field_amps")) {
            model.cs = qo::CouplingSet::from_decomposition(
                read_matrix(jc.at("field_amps"), "params.couplings.field_amps"),
                jc.at("scale_gamma").get<double>());
        } else if (jc.contains("matrix")) {
            model.cs =
                qo::CouplingSet::from_matrix(read_matrix(jc.at("matrix"), "params.couplings.matrix"));
        } else {
            throw InputError("params: couplings need 'field_amps'+'scale_gamma' or 'matrix'");
        }

        if (j.contains("hyperfine")) {
            const json& jh = j.at("hyperfine");
            const double dg = jh.value("delta_g", 0.0);
            const double de = jh.value("delta_e", 0.0);
            const auto table = transition_table(dg, de);
            model.transitions.assign(table.begin(), table.end());
            const std::string polmode = jh.value("polarization", "pi");
            if (polmode == "pi")
                model.pol = PolarizationConfig::unmagnetized();
            else if (polmode == "all")
                model.pol = PolarizationConfig::all_unit();
            else
                throw InputError("params.hyperfine.polarization: expected 'pi' or 'all'");
        }
        model.validate();
        return model;
    } catch (const json::exception& e) {
        throw InputError(std::string("params: ") + e.what());
    }
}

json to_json(const cal::FitReport& report) {
    json modes = json::array();
    for (std::size_t j = 0; j < report.params.modes.size(); ++j) {
        const qo::Mode& m = report.params.modes[j];
        modes.push_back(json{{"theta0_mrad", m.theta0 * 1e3},
                             {"kappa_gamma", m.kappa},
                             {"kappaR_gamma", m.kappa_r},
                             {"criticality", report.criticality.at(j)}});
    }
    json jp{{"modes", std::move(modes)}, {"r", complex_to_json(report.params.r)}};
    if (report.params.envelope.enabled)
        jp["envelope"] = json{{"delta", report.params.envelope.delta},
                              {"beta", report.params.envelope.beta}};
    return json{{"converged", report.converged},
                {"multimodal", report.multimodal},
                {"iterations", report.iterations},
                {"residual_rms", report.residual_rms},
                {"cost_history", report.cost_history},
                {"params", std::move(jp)}};
}

json to_json(const Spectrum& sp, const std::string& manifest_ref) {
    json rows = json::array();
    for (std::size_t it = 0; it < sp.n_theta(); ++it)
        for (std::size_t id = 0; id < sp.n_delta(); ++id) {
            const complexd& v = sp.at(it, id);
            rows.push_back(json::array(
                {sp.theta[it], sp.delta[id], v.real(), v.imag(), std::norm(v)}));
        }
    return json{
        {"meta", json{{"engine", sp.engine},
                      {"params_hash", sp.params_hash},
                      {"version", std::string(kEngineName) + " " + kVersion},
                      {"manifest", manifest_ref}}},
        {"columns", json::array({"theta_rad", "delta_gamma", "re_R", "im_R", "abs2_R"})},
        {"rows", std::move(rows)}};
}

CavityStack read_stack(const std::string& path) {
    return stack_from_json(parse_file(path));
}

qo::QoModel read_params(const std::string& path) {
    return model_from_json(parse_file(path));
}

void write_params(const qo::QoModel& model, const std::string& path,
                  const std::string& name) {
    write_text(path, to_json(model, name).dump(2) + "\n");
}

void write_fit_report(const cal::FitReport& report, const std::string& path) {
    write_text(path, to_json(report).dump(2) + "\n");
}

void write_pipeline_report(const cal::PipelineResult& result, const std::string& path) {
    json j{{"status", result.status},
           {"theta_eval_mrad", result.theta_eval * 1e3},
           {"scale_residual", result.scale_residual},
           {"mode_fit", to_json(result.mode_fit)}};
    if (result.cs.has_decomposition)
        j["scale_gamma"] = result.cs.scale;
    write_text(path, j.dump(2) + "\n");
}

void write_spectrum_csv(const Spectrum& sp, const std::string& path,
                        const std::string& manifest_ref) {
    std::ostringstream out;
    out << "# " << kEngineName << " " << kVersion << "\n";
    out << "# engine: " << sp.engine << "\n";
    out << "# params_hash: " << sp.params_hash << "\n";
    out << "# manifest: " << manifest_ref << "\n";
    out << "theta_rad,delta_gamma,re_R,im_R,abs2_R\n";
    for (std::size_t it = 0; it < sp.n_theta(); ++it)
        for (std::size_t id = 0; id < sp.n_delta(); ++id) {
            const complexd& v = sp.at(it, id);
            out << format_double(sp.theta[it]) << ',' << format_double(sp.delta[id])
                << ',' << format_double(v.real()) << ',' << format_double(v.imag())
                << ',' << format_double(std::norm(v)) << "\n";
        }
    write_text(path, out.str());
}

void write_spectrum_json(const Spectrum& sp, const std::string& path,
                         const std::string& manifest_ref) {
    write_text(path, to_json(sp, manifest_ref).dump(2) + "\n");
}

void write_field_csv(const parratt::FieldMap& fm, const std::string& path,
                     const std::string& manifest_ref) {
    std::ostringstream out;
    out << "# " << kEngineName << " " << kVersion << "\n";
    out << "# engine: parratt\n";
    out << "# manifest: " << manifest_ref << "\n";
    out << "depth_nm,re_E,im_E,intensity\n";
    for (std::size_t i = 0; i < fm.depth_nm.size(); ++i) {
        const complexd& v = fm.amplitude[i];
        out << format_double(fm.depth_nm[i]) << ',' << format_double(v.real()) << ','
            << format_double(v.imag()) << ',' << format_double(std::norm(v)) << "\n";
    }
    write_text(path, out.str());
}

Manifest make_manifest(const std::string& command,
                       const std::vector<std::string>& inputs,
                       const std::string& params_hash,
                       const std::vector<std::string>& outputs) {
    Manifest m;
    m.command = command;
    m.inputs = inputs;
    m.params_hash = params_hash;
    m.engine_version = std::string(kEngineName) + " " + kVersion;
    char buf[32];
    const std::time_t now = std::time(nullptr);
    std::tm tm_utc{};
    gmtime_r(&now, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    m.timestamp = buf;
    m.outputs = outputs;
    return m;
}

void write_manifest(const Manifest& m, const std::string& path) {
    const json j{{"command", m.command},
                 {"inputs", m.inputs},
                 {"params_hash", m.params_hash},
                 {"engine_version", m.engine_version},
                 {"timestamp", m.timestamp},
                 {"outputs", m.outputs}};
    write_text(path, j.dump(2) + "\n");
}

std::string content_hash(const json& j) {
    const std::string dump = j.dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (const unsigned char c : dump) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[32];
    std::snprintf(buf, sizeof(buf), "fnv1a:%016" PRIx64, h);
    return buf;
}

std::string params_hash(const CavityStack& stack) { return content_hash(to_json(stack)); }

std::string params_hash(const qo::QoModel& model) { return content_hash(to_json(model)); }

} // namespace nucav::io
