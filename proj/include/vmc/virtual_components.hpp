#pragma once

// Force laws for the virtual mechanical elements that shape the shared
// workspace: goal springs with a moving anchor, Gaussian-energy avoidance
// springs and the unilateral saturating damper used against human hands.
//
// Everything here is a pure function of its arguments.

#include <optional>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace vmc {

using Vec3 = Eigen::Vector3d;

class ParameterError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Returns `v` rescaled so that its norm does not exceed `cap`.
/// Direction is preserved; a zero vector stays zero.
Vec3 clamp_magnitude(const Vec3& v, double cap);

struct GoalSpringSpec {
    double stiffness = 0.0;  // N/m
    double damping = 0.0;    // N*s/m
    double force_cap = 0.0;  // N

    void validate() const;
};

/// Critical damping for a virtual point mass on a spring of stiffness k.
double critical_damping(double stiffness, double virtual_mass);

/// Moving-goal filter. The anchor slides linearly from `start_position` to
/// `goal_position` at constant `speed`, starting at `start_time`.
struct TimeLawFilter {
    Vec3 start_position = Vec3::Zero();
    Vec3 goal_position = Vec3::Zero();
    double speed = 1.0;  // m/s
    double start_time = 0.0;

    /// s(t) in [0, 1]. Strictly increasing until it saturates at 1.
    double progress(double t) const;
    /// Time at which the anchor reaches the goal.
    double arrival_time() const;
    /// d/dt of the anchor position (zero once arrived).
    Vec3 anchor_velocity(double t) const;
};

Vec3 filtered_goal_position(const TimeLawFilter& filter, double t);

Vec3 goal_spring_force(const Vec3& x_ee, const Vec3& v_ee, const Vec3& x_target,
                       const Vec3& v_target, const GoalSpringSpec& spec);

/// Gaussian-energy spring, E(x) = -k sigma^2 exp(-|x|^2 / 2 sigma^2).
///
/// Signs follow the parameter tables: negative stiffness (and negative
/// max_force) means repulsion. The force magnitude peaks at separation sigma
/// with value |k| sigma e^{-1/2} = |max_force|.
struct GaussianSpringSpec {
    double stiffness = 0.0;  // N/m, signed
    double sigma = 0.0;      // m
    double max_force = 0.0;  // N, same sign as stiffness
    double cutoff = 0.0;     // m; pairs farther apart are skipped, 0 = never

    static GaussianSpringSpec from_k_sigma(double k, double sigma);
    static GaussianSpringSpec from_k_fmax(double k, double f_max);
    static GaussianSpringSpec from_sigma_fmax(double sigma, double f_max);

    void validate() const;
    double energy(const Vec3& displacement) const;
};

double sigma_from_k_fmax(double k, double f_max);
double k_from_sigma_fmax(double sigma, double f_max);

/// Force on the agent at x_self produced by a spring towards x_obj.
Vec3 gaussian_avoidance_force(const Vec3& x_self, const Vec3& x_obj, const GaussianSpringSpec& spec);

struct UnilateralDamperSpec {
    double base_damping = 0.0;       // c0, N*s/m
    double activation_radius = 0.0;  // R, m
    double force_cap = 0.0;          // N

    void validate() const;
};

/// Linearly decaying damping coefficient c(|d|); zero at and beyond R.
double damper_coefficient(double distance, const UnilateralDamperSpec& spec);

/// Brake force on the end-effector. Pushes the end-effector away from the
/// hand while the hand approaches within the activation radius; zero
/// otherwise. Returns nullopt when hand and end-effector coincide, where the
/// direction is undefined.
std::optional<Vec3> unilateral_damper_force(const Vec3& x_ee, const Vec3& v_ee, const Vec3& x_hand,
                                            const Vec3& v_hand, const UnilateralDamperSpec& spec);

/// Static plane obstacle (the table). The spring is a Gaussian spring whose
/// other anchor is the projection of the end-effector onto the plane
/// z = height (+ raise while a block is grasped). Below the plane the force
/// points up with the peak magnitude.
struct ObstacleSpringSpec {
    GaussianSpringSpec spring;
    double plane_height = 0.0;
    double grasp_raise = 0.03;

    double effective_height(bool grasping) const {
        return plane_height + (grasping ? grasp_raise : 0.0);
    }
};

Vec3 obstacle_spring_force(const Vec3& x_ee, bool grasping, const ObstacleSpringSpec& spec);

}  // namespace vmc
