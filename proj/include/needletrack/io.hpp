#pragma once

#include <cstdio>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include <needletrack/filter.hpp>
#include <needletrack/observation.hpp>
#include <needletrack/simulator.hpp>

namespace needletrack {

// ---------------------------------------------------------------------------
// Number formatting (round-trip exact)
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// Detection log
// ---------------------------------------------------------------------------
//
// Line-delimited, one frame per line:
//   <frame> [gt x y z ax ay az angle] [act tx ty tz rx ry rz] label:x:y ...
// The ground-truth pose is 7 numbers: position plus unit rotation axis and
// angle. Unlabeled body points use the label "body".

struct LogFrame {
    int index = 0;
    std::optional<Pose6D> truth;
    std::optional<Action> action;
    DetectionSet detections;
};

inline LogFrame to_log_frame(const SimFrame& f) {
    LogFrame out;
    out.index = f.index;
    out.truth = f.truth;
    out.action = f.action;
    out.detections = f.detections;
    return out;
}

inline void write_detection_log(std::ostream& os,
                                std::span<const LogFrame> frames) {
    for (const LogFrame& f : frames) {
        os << f.index;
        if (f.truth) {
            const double angle = f.truth->orientation.norm();
            const Vec3 axis =
                angle > 0.0 ? Vec3(f.truth->orientation / angle) : Vec3::Zero();
            os << " gt";
            for (int i = 0; i < 3; ++i) os << ' ' << format_double(f.truth->position(i));
            for (int i = 0; i < 3; ++i) os << ' ' << format_double(axis(i));
            os << ' ' << format_double(angle);
        }
        if (f.action) {
            os << " act";
            for (int i = 0; i < 3; ++i) os << ' ' << format_double(f.action->translation(i));
            for (int i = 0; i < 3; ++i) os << ' ' << format_double(f.action->rotation(i));
        }
        for (const auto& [label, p] : f.detections.labeled) {
            os << ' ' << label << ':' << format_double(p.x) << ':'
               << format_double(p.y);
        }
        for (const PixelPoint& p : f.detections.body) {
            os << " body:" << format_double(p.x) << ':' << format_double(p.y);
        }
        os << '\n';
    }
}

inline std::vector<LogFrame> read_detection_log(std::istream& is) {
    std::vector<LogFrame> frames;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        LogFrame f;
        auto fail = [&](const std::string& what) -> ParseError {
            return ParseError("detection log line " + std::to_string(lineno) +
                              " (frame " + std::to_string(f.index) + "): " + what);
        };
        if (!(ss >> f.index)) throw fail("missing frame index");
        std::string tok;
        while (ss >> tok) {
            if (tok == "gt") {
                double v[7];
                for (double& x : v) {
                    if (!(ss >> x)) throw fail("truncated ground-truth pose");
                }
                // Assign fields directly: the stored values are already
                // canonical and must round trip bit-exactly.
                Pose6D truth;
                truth.position = Vec3(v[0], v[1], v[2]);
                truth.orientation = v[6] * Vec3(v[3], v[4], v[5]);
                f.truth = truth;
            } else if (tok == "act") {
                double v[6];
                for (double& x : v) {
                    if (!(ss >> x)) throw fail("truncated action");
                }
                Action action;
                action.translation = Vec3(v[0], v[1], v[2]);
                action.rotation = Vec3(v[3], v[4], v[5]);
                f.action = action;
            } else {
                const auto c1 = tok.find(':');
                const auto c2 = tok.find(':', c1 == std::string::npos ? 0 : c1 + 1);
                if (c1 == std::string::npos || c2 == std::string::npos) {
                    throw fail("malformed point token '" + tok + "'");
                }
                const std::string label = tok.substr(0, c1);
                PixelPoint p;
                try {
                    p.x = std::stod(tok.substr(c1 + 1, c2 - c1 - 1));
                    p.y = std::stod(tok.substr(c2 + 1));
                } catch (const std::exception&) {
                    throw fail("malformed coordinates in '" + tok + "'");
                }
                if (label == "body") {
                    f.detections.body.push_back(p);
                } else {
                    f.detections.labeled[label] = p;
                }
            }
        }
        if (f.detections.size() == 0) throw fail("frame has no detections");
        f.detections.frame = f.index;
        frames.push_back(std::move(f));
    }
    return frames;
}

// ---------------------------------------------------------------------------
// Track file
// ---------------------------------------------------------------------------

struct TrackRecord {
    int index = 0;
    Pose6D estimate;
    std::optional<PoseError> error;
};

inline void write_track_file(std::ostream& os,
                             std::span<const TrackRecord> records) {
    bool with_error = false;
    for (const auto& r : records) with_error = with_error || r.error.has_value();
    os << "# frame x y z qx qy qz";
    if (with_error) os << " pos_err_mm ori_err_deg";
    os << '\n';
    for (const TrackRecord& r : records) {
        os << r.index;
        for (int i = 0; i < 3; ++i) os << ' ' << format_double(r.estimate.position(i));
        for (int i = 0; i < 3; ++i) os << ' ' << format_double(r.estimate.orientation(i));
        if (with_error && r.error) {
            os << ' ' << format_double(r.error->position_mm) << ' '
               << format_double(r.error->orientation_deg);
        }
        os << '\n';
    }
}

inline std::vector<TrackRecord> read_track_file(std::istream& is) {
    std::vector<TrackRecord> records;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        TrackRecord r;
        double v[6];
        if (!(ss >> r.index >> v[0] >> v[1] >> v[2] >> v[3] >> v[4] >> v[5])) {
            throw ParseError("track file line " + std::to_string(lineno) +
                             ": truncated record");
        }
        r.estimate.position = Vec3(v[0], v[1], v[2]);
        r.estimate.orientation = Vec3(v[3], v[4], v[5]);
        double pe, oe;
        if (ss >> pe >> oe) r.error = PoseError{pe, oe};
        records.push_back(r);
    }
    return records;
}

// ---------------------------------------------------------------------------
// Experiment configuration (JSON)
// ---------------------------------------------------------------------------

struct ExperimentConfig {
    CameraIntrinsics camera = default_camera();
    NeedleModel needle = default_needle();
    TrajectorySpec trajectory = default_trajectory(TrajectorySpec::Kind::Static);
    NoiseSpec noise{0.5, 0};
    FilterConfig filter;
    // bench grid
    std::vector<ObservationVariant> variants = {
        ObservationVariant::Pose,        ObservationVariant::FPS,
        ObservationVariant::OnePointEP,  ObservationVariant::TwoPointsEP,
        ObservationVariant::OnePointEM,  ObservationVariant::TwoPointsEM};
    std::vector<double> sigmas = {0.5, 1.0, 1.5};
    std::vector<TrajectorySpec::Kind> motions = {TrajectorySpec::Kind::Static,
                                                 TrajectorySpec::Kind::Moving};
    int trials = 10;
    std::uint64_t seed = 0;

    void validate() const {
        noise.validate();
        trajectory.validate();
        filter.validate();
        if (trials < 1) throw ConfigError("field 'trials' must be >= 1");
    }
};

namespace detail {

inline Vec3 vec3_from_json(const nlohmann::json& j, const std::string& field) {
    if (!j.is_array() || j.size() != 3) {
        throw ConfigError("field '" + field + "' must be a 3-element array");
    }
    return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

inline nlohmann::json vec3_to_json(const Vec3& v) {
    return nlohmann::json::array({v.x(), v.y(), v.z()});
}

}  // namespace detail

inline nlohmann::json to_json(const ExperimentConfig& c) {
    using nlohmann::json;
    const double deg = std::numbers::pi / 180.0;
    json j;
    j["camera"] = {{"fx", c.camera.fx}, {"fy", c.camera.fy},
                   {"cx", c.camera.cx}, {"cy", c.camera.cy},
                   {"width", c.camera.width}, {"height", c.camera.height}};
    j["needle"] = {{"radius_m", c.needle.radius},
                   {"arc_extent_rad", c.needle.arc_extent}};
    json traj;
    traj["kind"] =
        c.trajectory.kind == TrajectorySpec::Kind::Static ? "static" : "moving";
    traj["steps"] = c.trajectory.steps;
    traj["view_margin_px"] = c.trajectory.view_margin;
    traj["initial"] = {{"position", detail::vec3_to_json(c.trajectory.initial.position)},
                       {"orientation", detail::vec3_to_json(c.trajectory.initial.orientation)}};
    traj["actions"] = json::array();
    for (const Action& a : c.trajectory.actions) {
        traj["actions"].push_back({{"translation", detail::vec3_to_json(a.translation)},
                                   {"rotation", detail::vec3_to_json(a.rotation)}});
    }
    j["trajectory"] = traj;
    j["noise"] = {{"sigma_px", c.noise.sigma}};
    json filt;
    filt["particles"] = c.filter.particle_count;
    filt["effective_threshold"] = c.filter.effective_threshold;
    filt["motion_std"] = {{"position_m", std::sqrt(c.filter.motion_noise.covariance()(0, 0))},
                          {"rotation_rad", std::sqrt(c.filter.motion_noise.covariance()(3, 3))}};
    filt["initial_std"] = {{"position_m", std::sqrt(c.filter.initial_noise.covariance()(0, 0))},
                           {"rotation_rad", std::sqrt(c.filter.initial_noise.covariance()(3, 3))}};
    json obs;
    obs["variant"] = to_string(c.filter.observation.variant);
    obs["default_pixel_std"] = c.filter.observation.noise.default_pixel_std;
    obs["pixel_std"] = c.filter.observation.noise.pixel_std;
    const Mat5& ep = c.filter.observation.noise.ep_cov;
    obs["ep_std"] = json::array({std::sqrt(ep(0, 0)), std::sqrt(ep(1, 1)),
                                 std::sqrt(ep(2, 2)), std::sqrt(ep(3, 3)),
                                 std::sqrt(ep(4, 4)) / deg});
    const Mat6& pc = c.filter.observation.noise.pose_cov;
    obs["pose_std"] = json::array({std::sqrt(pc(0, 0)) * 1e3, std::sqrt(pc(1, 1)) * 1e3,
                                   std::sqrt(pc(2, 2)) * 1e3, std::sqrt(pc(3, 3)) / deg,
                                   std::sqrt(pc(4, 4)) / deg, std::sqrt(pc(5, 5)) / deg});
    obs["fps_body_fractions"] = c.filter.observation.fps_body_fractions;
    filt["observation"] = obs;
    j["filter"] = filt;
    json variants = json::array();
    for (auto v : c.variants) variants.push_back(to_string(v));
    j["variants"] = variants;
    j["sigmas"] = c.sigmas;
    json motions = json::array();
    for (auto m : c.motions) {
        motions.push_back(m == TrajectorySpec::Kind::Static ? "static" : "moving");
    }
    j["motions"] = motions;
    j["trials"] = c.trials;
    j["seed"] = c.seed;
    return j;
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    using nlohmann::json;
    const double deg = std::numbers::pi / 180.0;
    ExperimentConfig c;
    try {
        if (j.contains("camera")) {
            const auto& cam = j.at("camera");
            c.camera = CameraIntrinsics(
                cam.at("fx").get<double>(), cam.at("fy").get<double>(),
                cam.at("cx").get<double>(), cam.at("cy").get<double>(),
                cam.at("width").get<int>(), cam.at("height").get<int>());
        }
        if (j.contains("needle")) {
            c.needle = NeedleModel(j.at("needle").at("radius_m").get<double>(),
                                   j.at("needle").value("arc_extent_rad",
                                                        std::numbers::pi));
        }
        if (j.contains("trajectory")) {
            const auto& traj = j.at("trajectory");
            const std::string kind = traj.value("kind", "static");
            if (kind != "static" && kind != "moving") {
                throw ConfigError("field 'trajectory.kind' must be 'static' or 'moving'");
            }
            c.trajectory = default_trajectory(kind == "static"
                                                  ? TrajectorySpec::Kind::Static
                                                  : TrajectorySpec::Kind::Moving);
            c.trajectory.steps = traj.value("steps", 300);
            c.trajectory.view_margin = traj.value("view_margin_px", 4.0);
            if (traj.contains("initial")) {
                // Direct field assignment keeps serialized poses bit-exact.
                c.trajectory.initial.position =
                    detail::vec3_from_json(traj.at("initial").at("position"),
                                           "trajectory.initial.position");
                c.trajectory.initial.orientation =
                    detail::vec3_from_json(traj.at("initial").at("orientation"),
                                           "trajectory.initial.orientation");
            }
            if (traj.contains("actions")) {
                c.trajectory.actions.clear();
                for (const auto& a : traj.at("actions")) {
                    Action action;
                    action.translation =
                        detail::vec3_from_json(a.at("translation"),
                                               "trajectory.actions[].translation");
                    action.rotation =
                        detail::vec3_from_json(a.at("rotation"),
                                               "trajectory.actions[].rotation");
                    c.trajectory.actions.push_back(action);
                }
            }
        }
        if (j.contains("noise")) {
            c.noise.sigma = j.at("noise").at("sigma_px").get<double>();
            if (c.noise.sigma < 0.0) {
                throw ConfigError("field 'noise.sigma_px' must be >= 0");
            }
        }
        if (j.contains("filter")) {
            const auto& f = j.at("filter");
            c.filter.particle_count = f.value("particles", 5000);
            c.filter.effective_threshold = f.value("effective_threshold", -1.0);
            if (f.contains("motion_std")) {
                c.filter.motion_noise = MotionNoise::from_stddev(
                    f.at("motion_std").at("position_m").get<double>(),
                    f.at("motion_std").at("rotation_rad").get<double>());
            }
            if (f.contains("initial_std")) {
                c.filter.initial_noise = MotionNoise::from_stddev(
                    f.at("initial_std").at("position_m").get<double>(),
                    f.at("initial_std").at("rotation_rad").get<double>());
            }
            if (f.contains("observation")) {
                const auto& o = f.at("observation");
                auto& spec = c.filter.observation;
                spec.variant = variant_from_string(o.value("variant", "two_points_em"));
                spec.noise.default_pixel_std = o.value("default_pixel_std", 1.0);
                if (o.contains("pixel_std")) {
                    spec.noise.pixel_std =
                        o.at("pixel_std").get<std::map<std::string, double>>();
                }
                if (o.contains("ep_std")) {
                    const auto& s = o.at("ep_std");
                    if (!s.is_array() || s.size() != 5) {
                        throw ConfigError("field 'observation.ep_std' must have 5 entries");
                    }
                    Vec5 d;
                    d << s[0].get<double>(), s[1].get<double>(), s[2].get<double>(),
                        s[3].get<double>(), s[4].get<double>() * deg;
                    spec.noise.ep_cov = Mat5(d.cwiseProduct(d).asDiagonal());
                }
                if (o.contains("pose_std")) {
                    const auto& s = o.at("pose_std");
                    if (!s.is_array() || s.size() != 6) {
                        throw ConfigError("field 'observation.pose_std' must have 6 entries");
                    }
                    Vec6 d;
                    d << s[0].get<double>() * 1e-3, s[1].get<double>() * 1e-3,
                        s[2].get<double>() * 1e-3, s[3].get<double>() * deg,
                        s[4].get<double>() * deg, s[5].get<double>() * deg;
                    spec.noise.pose_cov = Mat6(d.cwiseProduct(d).asDiagonal());
                }
                if (o.contains("fps_body_fractions")) {
                    spec.fps_body_fractions =
                        o.at("fps_body_fractions").get<std::vector<double>>();
                }
            }
        }
        if (j.contains("variants")) {
            c.variants.clear();
            for (const auto& v : j.at("variants")) {
                c.variants.push_back(variant_from_string(v.get<std::string>()));
            }
        }
        if (j.contains("sigmas")) c.sigmas = j.at("sigmas").get<std::vector<double>>();
        if (j.contains("motions")) {
            c.motions.clear();
            for (const auto& m : j.at("motions")) {
                const std::string s = m.get<std::string>();
                if (s != "static" && s != "moving") {
                    throw ConfigError("field 'motions' entries must be 'static' or 'moving'");
                }
                c.motions.push_back(s == "static" ? TrajectorySpec::Kind::Static
                                                  : TrajectorySpec::Kind::Moving);
            }
        }
        c.trials = j.value("trials", 10);
        c.seed = j.value("seed", std::uint64_t{0});
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    c.validate();
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Results CSV
// ---------------------------------------------------------------------------

inline constexpr const char* kCsvHeader =
    "variant,motion,sigma,pos_mean_mm,pos_std_mm,ori_mean_deg,ori_std_deg,"
    "runtime_s_per_frame,failures,trials";

inline void write_summary_csv_row(std::ostream& os, const ErrorSummary& r) {
    os << r.variant << ',' << r.motion << ',' << format_double(r.sigma) << ','
       << format_double(r.pos_mean_mm) << ',' << format_double(r.pos_std_mm)
       << ',' << format_double(r.ori_mean_deg) << ','
       << format_double(r.ori_std_deg) << ','
       << format_double(r.runtime_s_per_frame) << ',' << r.failures << ','
       << r.trials << '\n';
}

inline void write_summary_csv(std::ostream& os,
                              std::span<const ErrorSummary> rows) {
    os << kCsvHeader << '\n';
    for (const ErrorSummary& r : rows) write_summary_csv_row(os, r);
}

}  // namespace needletrack
