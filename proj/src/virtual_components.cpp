#include "vmc/virtual_components.hpp"

#include <algorithm>
#include <cmath>

namespace vmc {

namespace {

const double kSqrtE = std::exp(0.5);

bool finite_nonzero(double v) { return std::isfinite(v) && v != 0.0; }

}  // namespace

Vec3 clamp_magnitude(const Vec3& v, double cap) {
    const double n = v.norm();
    if (n <= cap || n == 0.0) {
        return v;
    }
    return v * (cap / n);
}

void GoalSpringSpec::validate() const {
    if (!(stiffness > 0.0) || !std::isfinite(stiffness)) {
        throw ParameterError("goal spring stiffness must be positive");
    }
    if (!(damping >= 0.0) || !std::isfinite(damping)) {
        throw ParameterError("goal spring damping must be non-negative");
    }
    if (!(force_cap > 0.0)) {
        throw ParameterError("goal spring force cap must be positive");
    }
}

double critical_damping(double stiffness, double virtual_mass) {
    return 2.0 * std::sqrt(stiffness * virtual_mass);
}

double TimeLawFilter::progress(double t) const {
    const double distance = (goal_position - start_position).norm();
    if (distance == 0.0) {
        return 1.0;
    }
    const double elapsed = std::max(0.0, t - start_time);
    return std::min(1.0, speed * elapsed / distance);
}

double TimeLawFilter::arrival_time() const {
    return start_time + (goal_position - start_position).norm() / speed;
}

Vec3 TimeLawFilter::anchor_velocity(double t) const {
    const Vec3 delta = goal_position - start_position;
    const double distance = delta.norm();
    if (distance == 0.0 || t < start_time || t >= arrival_time()) {
        return Vec3::Zero();
    }
    return delta * (speed / distance);
}

Vec3 filtered_goal_position(const TimeLawFilter& filter, double t) {
    const double s = filter.progress(t);
    if (s >= 1.0) {
        return filter.goal_position;
    }
    return filter.start_position + s * (filter.goal_position - filter.start_position);
}

Vec3 goal_spring_force(const Vec3& x_ee, const Vec3& v_ee, const Vec3& x_target,
                       const Vec3& v_target, const GoalSpringSpec& spec) {
    const Vec3 raw = spec.stiffness * (x_target - x_ee) + spec.damping * (v_target - v_ee);
    return clamp_magnitude(raw, spec.force_cap);
}

double sigma_from_k_fmax(double k, double f_max) {
    if (!finite_nonzero(k) || !finite_nonzero(f_max)) {
        throw ParameterError("sigma_from_k_fmax: k and f_max must be finite and nonzero");
    }
    const double sigma = f_max * kSqrtE / k;
    if (!(sigma > 0.0)) {
        throw ParameterError("sigma_from_k_fmax: k and f_max must share a sign");
    }
    return sigma;
}

double k_from_sigma_fmax(double sigma, double f_max) {
    if (!finite_nonzero(sigma) || !finite_nonzero(f_max)) {
        throw ParameterError("k_from_sigma_fmax: sigma and f_max must be finite and nonzero");
    }
    if (sigma < 0.0) {
        throw ParameterError("k_from_sigma_fmax: sigma must be positive");
    }
    return f_max * kSqrtE / sigma;
}

GaussianSpringSpec GaussianSpringSpec::from_k_sigma(double k, double sigma) {
    if (!finite_nonzero(k) || !(sigma > 0.0) || !std::isfinite(sigma)) {
        throw ParameterError("gaussian spring: k must be nonzero and sigma positive");
    }
    return {k, sigma, k * sigma / kSqrtE};
}

GaussianSpringSpec GaussianSpringSpec::from_k_fmax(double k, double f_max) {
    return {k, sigma_from_k_fmax(k, f_max), f_max};
}

GaussianSpringSpec GaussianSpringSpec::from_sigma_fmax(double sigma, double f_max) {
    return {k_from_sigma_fmax(sigma, f_max), sigma, f_max};
}

void GaussianSpringSpec::validate() const {
    if (!finite_nonzero(stiffness) || !(sigma > 0.0) || !finite_nonzero(max_force)) {
        throw ParameterError("gaussian spring: invalid parameters");
    }
    const double implied = max_force * kSqrtE / stiffness;
    if (std::abs(implied - sigma) > 1e-9 * sigma) {
        throw ParameterError("gaussian spring: sigma inconsistent with k and f_max");
    }
}

double GaussianSpringSpec::energy(const Vec3& displacement) const {
    return -stiffness * sigma * sigma *
           std::exp(-displacement.squaredNorm() / (2.0 * sigma * sigma));
}

Vec3 gaussian_avoidance_force(const Vec3& x_self, const Vec3& x_obj, const GaussianSpringSpec& spec) {
    const Vec3 x = x_obj - x_self;
    if (spec.cutoff > 0.0 && x.squaredNorm() > spec.cutoff * spec.cutoff) {
        return Vec3::Zero();
    }
    return spec.stiffness * std::exp(-x.squaredNorm() / (2.0 * spec.sigma * spec.sigma)) * x;
}

void UnilateralDamperSpec::validate() const {
    if (!(base_damping > 0.0) || !(activation_radius > 0.0) || !(force_cap > 0.0)) {
        throw ParameterError("unilateral damper: c0, R and f_max must be positive");
    }
}

double damper_coefficient(double distance, const UnilateralDamperSpec& spec) {
    if (distance >= spec.activation_radius) {
        return 0.0;
    }
    return spec.base_damping * (1.0 - distance / spec.activation_radius);
}

std::optional<Vec3> unilateral_damper_force(const Vec3& x_ee, const Vec3& v_ee, const Vec3& x_hand,
                                            const Vec3& v_hand, const UnilateralDamperSpec& spec) {
    const Vec3 d = x_hand - x_ee;
    const double dist = d.norm();
    if (dist == 0.0) {
        return std::nullopt;
    }
    const Vec3 dir = d / dist;
    const double r_dot = dir.dot(v_hand - v_ee);
    if (r_dot >= 0.0 || dist >= spec.activation_radius) {
        return Vec3::Zero();
    }
    const double magnitude = std::min(-damper_coefficient(dist, spec) * r_dot, spec.force_cap);
    // Repulsive: away from the hand.
    return Vec3(-magnitude * dir);
}

Vec3 obstacle_spring_force(const Vec3& x_ee, bool grasping, const ObstacleSpringSpec& spec) {
    const double h = spec.effective_height(grasping);
    if (x_ee.z() < h) {
        // Under the plane: keep pushing up at the peak magnitude instead of
        // letting the Gaussian pull the end-effector further down.
        return Vec3(0.0, 0.0, std::abs(spec.spring.max_force));
    }
    const Vec3 on_plane(x_ee.x(), x_ee.y(), h);
    return gaussian_avoidance_force(x_ee, on_plane, spec.spring);
}

}  // namespace vmc
