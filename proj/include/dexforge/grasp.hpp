#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>
#include <vector>

#include "dexforge/errors.hpp"
#include "dexforge/geom.hpp"
#include "dexforge/hand.hpp"
#include "dexforge/hull.hpp"
#include "dexforge/mesh.hpp"
#include "dexforge/nnls.hpp"
#include "dexforge/rng.hpp"

namespace dexforge {

using Vector6d = Eigen::Matrix<double, 6, 1>;
using Mat63 = Eigen::Matrix<double, 6, 3>;

// Target wrenches the fitted contact forces must span; all unit norm.
struct WrenchBasis {
    std::vector<Vector6d> targets;
    double lambda = 1.0;
};

// ±unit force along each world axis, zero torque.
inline WrenchBasis default_wrench_basis() {
    WrenchBasis basis;
    for (int axis = 0; axis < 3; ++axis)
        for (double sign : {1.0, -1.0}) {
            Vector6d w = Vector6d::Zero();
            w[axis] = sign;
            basis.targets.push_back(w);
        }
    return basis;
}

// Maps a contact-frame force to an object wrench about the center of mass m.
inline Mat63 grasp_map(const Vec3& p_c, const Mat3& O_c, const Vec3& m) {
    Mat63 g;
    g.topRows<3>() = O_c;
    g.bottomRows<3>() = skew(p_c - m) * O_c;
    return g;
}

// Friction pyramid edge directions in the contact frame (z = pad normal):
// e_k = z + mu * t_k over four tangents. Any nonnegative combination stays
// inside the linearized cone.
inline std::array<Vec3, 4> pyramid_edges(double mu) {
    return {Vec3(mu, 0, 1), Vec3(0, mu, 1), Vec3(-mu, 0, 1), Vec3(0, -mu, 1)};
}

struct ForceFit {
    // forces[j][c]: contact-frame force at contact c for target j
    std::vector<std::vector<Vec3>> forces;
    // pyramid[j]: nonnegative edge coordinates (4 per contact) for target j
    std::vector<Eigen::VectorXd> pyramid;
    double residual = 0.0;  // sum over targets of squared wrench error
    // Unit direction of the worst per-target wrench error; zero when every
    // target is resolved. Drives the stability surrogate.
    Vector6d unresolved = Vector6d::Zero();
};

// Cone-constrained least squares: for each target wrench, the best
// nonnegative combination of pyramid-edge wrenches over all contacts.
inline ForceFit inner_force_fit(const std::vector<Mat63>& maps, const WrenchBasis& basis,
                                double mu) {
    if (maps.empty()) throw EmptyInput("force fit needs at least one contact");
    if (basis.targets.empty()) throw InvariantViolation("wrench basis is empty");
    if (basis.lambda < 0) throw InvariantViolation("wrench scaling must be nonnegative");
    for (const auto& w : basis.targets)
        if (std::abs(w.norm() - 1.0) > 1e-9)
            throw InvariantViolation("target wrenches must be unit norm");

    const auto edges = pyramid_edges(mu);
    const int C = static_cast<int>(maps.size());
    Eigen::MatrixXd A(6, 4 * C);
    for (int c = 0; c < C; ++c)
        for (int k = 0; k < 4; ++k) A.col(4 * c + k) = maps[c] * edges[k];

    ForceFit fit;
    fit.forces.resize(basis.targets.size());
    fit.pyramid.resize(basis.targets.size());
    double worst = 0.0;
    for (size_t j = 0; j < basis.targets.size(); ++j) {
        const Eigen::VectorXd b = basis.lambda * basis.targets[j];
        const Eigen::VectorXd alpha = nnls(A, b);
        const Vector6d r = b - A * alpha;
        fit.residual += r.squaredNorm();
        fit.pyramid[j] = alpha;
        fit.forces[j].resize(C);
        for (int c = 0; c < C; ++c) {
            Vec3 f = Vec3::Zero();
            for (int k = 0; k < 4; ++k) f += alpha[4 * c + k] * edges[k];
            fit.forces[j][c] = f;
        }
        const double rn = r.norm();
        if (rn > worst) {
            worst = rn;
            fit.unresolved = r / rn;
        }
    }
    if (worst <= 1e-12) fit.unresolved.setZero();
    return fit;
}

struct HandAssignment {
    int embodiment = 0;
    Pose wrist;
    std::vector<double> q;
};

inline bool operator==(const HandAssignment& a, const HandAssignment& b) {
    return a.embodiment == b.embodiment &&
           (a.wrist.rotation.coeffs() - b.wrist.rotation.coeffs()).squaredNorm() == 0.0 &&
           (a.wrist.translation - b.wrist.translation).squaredNorm() == 0.0 && a.q == b.q;
}

struct GraspCandidate {
    std::vector<HandAssignment> hands;
    std::vector<std::pair<int, int>> contacts;  // (hand slot, model contact id)
    ForceFit fit;
    double objective = std::numeric_limits<double>::infinity();
    double wrench_residual = std::numeric_limits<double>::infinity();  // fit / lambda^2
};

// Object geometry bundle used throughout synthesis: raw surface for contact
// distance, convex hull + half-spaces for collision, volume centroid as the
// wrench reference point.
struct GraspObject {
    TriMesh mesh;
    TriMesh hull;
    HalfSpaces planes;
    Vec3 com = Vec3::Zero();
};

inline GraspObject make_grasp_object(const TriMesh& mesh) {
    GraspObject obj;
    obj.mesh = mesh;
    obj.hull = convex_hull(mesh.vertices);
    obj.planes = half_spaces(obj.hull);
    mesh_volume(mesh, &obj.com);
    return obj;
}

struct GraspConfig {
    double kappa_w = 1.0;
    double kappa_con = 10.0;
    double kappa_coll = 100.0;
    double kappa_hh = 100.0;
    double mu = 0.5;
    WrenchBasis basis = default_wrench_basis();
    double step = 1e-2;          // initial line-search step
    double shrink = 0.5;         // backtracking factor
    int max_iters = 200;
    double rel_tol = 1e-6;       // relative objective change at convergence
    double fail_objective = 0.5; // above this at termination -> NoConverge
    double max_penetration = 1e-3;
    double standoff = 0.08;      // seed palm distance from the surface
};

// Contacts restricted to exactly n_f fingers. The thumb opposes the other
// digits, so it is always kept once two or more fingers participate;
// remaining slots fill in ascending finger order.
inline std::vector<int> restrict_contacts(const HandModelSpec& hand, int n_f) {
    if (n_f < 1 || n_f > hand.num_fingers)
        throw InvalidFingerCount("finger count " + std::to_string(n_f) +
                                 " outside [1, " + std::to_string(hand.num_fingers) + "]");
    std::vector<int> order;
    if (hand.thumb_finger >= 0) order.push_back(hand.thumb_finger);
    for (int f = 0; f < hand.num_fingers; ++f)
        if (f != hand.thumb_finger) order.push_back(f);
    order.resize(static_cast<size_t>(n_f));

    std::vector<int> ids;
    for (size_t c = 0; c < hand.contacts.size(); ++c)
        if (std::find(order.begin(), order.end(), hand.contacts[c].finger) != order.end())
            ids.push_back(static_cast<int>(c));
    return ids;
}

// One optimization instance: object, one hand model shared by every
// participating embodiment, and the restricted contact id set per hand.
struct GraspProblem {
    const GraspObject* object = nullptr;
    const HandModelSpec* hand = nullptr;
    std::vector<int> contact_ids;
    GraspConfig config;
};

struct ObjectiveBreakdown {
    double total = 0.0;
    double wrench = 0.0;
    double contact = 0.0;
    double collision = 0.0;
    double hand_hand = 0.0;
};

struct OptimizeTrace {
    std::vector<ObjectiveBreakdown> accepted;  // includes the seed evaluation
    int iterations = 0;
    bool converged = false;
};

namespace grasp_detail {

// Deepest (signed-distance argmax) half-space for a point; returns the plane
// normal used for the penetration gradient.
inline std::pair<double, Vec3> deepest_plane(const HalfSpaces& hs, const Vec3& p) {
    double best = -std::numeric_limits<double>::infinity();
    Vec3 n = Vec3::UnitZ();
    for (const auto& pl : hs.planes) {
        const double d = pl.head<3>().dot(p) - pl(3);
        if (d > best) {
            best = d;
            n = pl.head<3>();
        }
    }
    return {best, n};
}

// Contact frame in the link: z = pad normal, tangents completed
// deterministically. Fixed in the link, so world frames rotate smoothly.
inline Mat3 contact_frame_local(const HandContact& contact) {
    return frame_from_z(contact.normal);
}

struct Eval {
    std::vector<KinematicsCache> fk;
    // flattened contact arrays, hand-major in problem contact order
    std::vector<Vec3> p;     // world contact positions
    std::vector<Mat3> O;     // world contact frames
    ForceFit fit;
    ObjectiveBreakdown terms;
};

inline Eval evaluate(const GraspProblem& prob, const std::vector<HandAssignment>& hands) {
    const GraspConfig& cfg = prob.config;
    Eval ev;
    ev.fk.reserve(hands.size());
    for (const auto& h : hands) ev.fk.push_back(forward_kinematics(*prob.hand, h.wrist, h.q));

    std::vector<Mat63> maps;
    for (size_t h = 0; h < hands.size(); ++h)
        for (int cid : prob.contact_ids) {
            const HandContact& c = prob.hand->contacts[cid];
            const Pose& link = ev.fk[h].link_poses[c.link];
            const Vec3 pos = link.apply(c.position);
            const Mat3 frame = link.matrix() * contact_frame_local(c);
            ev.p.push_back(pos);
            ev.O.push_back(frame);
            maps.push_back(grasp_map(pos, frame, prob.object->com));
        }
    ev.fit = inner_force_fit(maps, cfg.basis, cfg.mu);
    ev.terms.wrench = ev.fit.residual;

    for (const auto& pos : ev.p) {
        const double d = closest_surface_point(prob.object->mesh, pos).distance;
        ev.terms.contact += d * d;
    }

    for (const auto& cache : ev.fk)
        for (const auto& [center, radius] : collision_spheres_world(cache)) {
            const double depth =
                std::max(0.0, radius - prob.object->planes.signed_distance(center));
            ev.terms.collision += depth * depth;
        }

    for (size_t a = 0; a + 1 < hands.size(); ++a)
        for (size_t b = a + 1; b < hands.size(); ++b)
            for (const auto& [ca, ra] : collision_spheres_world(ev.fk[a]))
                for (const auto& [cb, rb] : collision_spheres_world(ev.fk[b])) {
                    const double depth = std::max(0.0, ra + rb - (ca - cb).norm());
                    ev.terms.hand_hand += depth * depth;
                }

    ev.terms.total = cfg.kappa_w * ev.terms.wrench + cfg.kappa_con * ev.terms.contact +
                     cfg.kappa_coll * ev.terms.collision + cfg.kappa_hh * ev.terms.hand_hand;
    return ev;
}

// Gradient accumulator over the stacked per-hand parameters
// [t (3), axis-angle increment about the wrist origin (3), q (J)].
struct ParamGrad {
    const std::vector<KinematicsCache>* fk;
    int joints;
    Eigen::VectorXd g;

    ParamGrad(const std::vector<KinematicsCache>& caches, int joint_count)
        : fk(&caches), joints(joint_count) {
        g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(caches.size()) * (6 + joints));
    }

    int base(size_t hand) const { return static_cast<int>(hand) * (6 + joints); }

    void add_point(size_t hand, int link, const Vec3& p, const Vec3& dLdp) {
        const auto& cache = (*fk)[hand];
        g.segment<3>(base(hand)) += dLdp;
        g.segment<3>(base(hand) + 3) += (p - cache.wrist.translation).cross(dLdp);
        g.segment(base(hand) + 6, joints) +=
            point_jacobian_q(cache, link, p).transpose() * dLdp;
    }

    void add_direction(size_t hand, int link, const Vec3& d, const Vec3& dLdd) {
        g.segment<3>(base(hand) + 3) += d.cross(dLdd);
        g.segment(base(hand) + 6, joints) +=
            direction_jacobian_q((*fk)[hand], link, d).transpose() * dLdd;
    }
};

inline std::vector<HandAssignment> apply_step(const HandModelSpec& hand,
                                              const std::vector<HandAssignment>& state,
                                              const Eigen::VectorXd& delta) {
    const int block = 6 + hand.joint_count();
    std::vector<HandAssignment> out = state;
    for (size_t h = 0; h < out.size(); ++h) {
        const auto seg = delta.segment(static_cast<Eigen::Index>(h) * block, block);
        out[h].wrist.translation += seg.head<3>();
        Vector6d twist = Vector6d::Zero();
        twist.tail<3>() = seg.segment<3>(3);
        // rotation about the wrist origin: attached points move as e_k x (p - t)
        out[h].wrist.rotation =
            canonical_quat(se3_exp(twist).rotation * out[h].wrist.rotation);
        for (int j = 0; j < hand.joint_count(); ++j) out[h].q[j] += seg[6 + j];
        clamp_to_limits(hand, out[h].q);
    }
    return out;
}

}  // namespace grasp_detail

inline double grasp_objective(const GraspProblem& prob,
                              const std::vector<HandAssignment>& hands,
                              ObjectiveBreakdown* breakdown = nullptr,
                              ForceFit* fit = nullptr) {
    const auto ev = grasp_detail::evaluate(prob, hands);
    if (breakdown) *breakdown = ev.terms;
    if (fit) *fit = ev.fit;
    return ev.terms.total;
}

// Analytic gradient of the objective in the stacked parameter layout of
// grasp_detail::apply_step. The inner force fit enters through the envelope
// theorem: the fitted pyramid coordinates are held fixed.
inline Eigen::VectorXd grasp_gradient(const GraspProblem& prob,
                                      const std::vector<HandAssignment>& hands) {
    using grasp_detail::evaluate;
    const GraspConfig& cfg = prob.config;
    const auto ev = evaluate(prob, hands);
    grasp_detail::ParamGrad grad(ev.fk, prob.hand->joint_count());

    const auto edges = pyramid_edges(cfg.mu);
    const size_t per_hand = prob.contact_ids.size();
    const size_t targets = cfg.basis.targets.size();

    // Per-target residuals r_j = lambda w_j - A alpha_j, pyramid coordinates
    // held fixed at their fitted values.
    std::vector<Vector6d> residuals(targets);
    for (size_t j = 0; j < targets; ++j) {
        Vector6d acc = cfg.basis.lambda * cfg.basis.targets[j];
        for (size_t c = 0; c < ev.p.size(); ++c) {
            const Vec3 lever = ev.p[c] - prob.object->com;
            for (int k = 0; k < 4; ++k) {
                const double a = ev.fit.pyramid[j][static_cast<Eigen::Index>(4 * c) + k];
                if (a == 0.0) continue;
                const Vec3 d = ev.O[c] * edges[k];
                acc.head<3>() -= a * d;
                acc.tail<3>() -= a * lever.cross(d);
            }
        }
        residuals[j] = acc;
    }

    for (size_t idx = 0; idx < ev.p.size(); ++idx) {
        const size_t hand = idx / per_hand;
        const int cid = prob.contact_ids[idx % per_hand];
        const int link = prob.hand->contacts[cid].link;
        const Vec3 lever = ev.p[idx] - prob.object->com;

        Vec3 dLdp_wrench = Vec3::Zero();
        for (size_t j = 0; j < targets; ++j) {
            const Vec3 rf = residuals[j].head<3>(), rt = residuals[j].tail<3>();
            for (int k = 0; k < 4; ++k) {
                const double a =
                    ev.fit.pyramid[j][static_cast<Eigen::Index>(4 * idx) + k];
                if (a == 0.0) continue;
                const Vec3 d = ev.O[idx] * edges[k];
                grad.add_direction(hand, link, d,
                                   -2.0 * cfg.kappa_w * a * (rf + rt.cross(lever)));
                dLdp_wrench += -2.0 * cfg.kappa_w * a * d.cross(rt);
            }
        }
        grad.add_point(hand, link, ev.p[idx], dLdp_wrench);

        // contact-distance term: squared distance to the raw surface
        const auto hit = closest_surface_point(prob.object->mesh, ev.p[idx]);
        grad.add_point(hand, link, ev.p[idx],
                       2.0 * cfg.kappa_con * (ev.p[idx] - hit.point));
    }

    // sphere-into-hull penetration
    for (size_t h = 0; h < hands.size(); ++h)
        for (size_t l = 0; l < prob.hand->links.size(); ++l)
            for (const auto& [center, radius] : prob.hand->links[l].spheres) {
                const Vec3 cw = ev.fk[h].link_poses[l].apply(center);
                const auto [sd, normal] = grasp_detail::deepest_plane(prob.object->planes, cw);
                const double depth = radius - sd;
                if (depth > 0)
                    grad.add_point(h, static_cast<int>(l), cw,
                                   -2.0 * cfg.kappa_coll * depth * normal);
            }

    // sphere-sphere overlap across hands
    for (size_t a = 0; a + 1 < hands.size(); ++a)
        for (size_t b = a + 1; b < hands.size(); ++b)
            for (size_t la = 0; la < prob.hand->links.size(); ++la)
                for (size_t lb = 0; lb < prob.hand->links.size(); ++lb)
                    for (const auto& [ca, ra] : prob.hand->links[la].spheres)
                        for (const auto& [cb, rb] : prob.hand->links[lb].spheres) {
                            const Vec3 pa = ev.fk[a].link_poses[la].apply(ca);
                            const Vec3 pb = ev.fk[b].link_poses[lb].apply(cb);
                            const double dist = (pa - pb).norm();
                            const double depth = ra + rb - dist;
                            if (depth <= 0 || dist < 1e-12) continue;
                            const Vec3 u = (pa - pb) / dist;
                            grad.add_point(a, static_cast<int>(la), pa,
                                           -2.0 * prob.config.kappa_hh * depth * u);
                            grad.add_point(b, static_cast<int>(lb), pb,
                                           2.0 * prob.config.kappa_hh * depth * u);
                        }

    return grad.g;
}

// Projected-gradient descent with a backtracking line search. Accepted steps
// never increase the objective; joint limits are enforced by clamping.
inline GraspCandidate optimize_grasp(const GraspProblem& prob, const GraspCandidate& seed,
                                     OptimizeTrace* trace = nullptr) {
    if (!prob.object || !prob.hand) throw InvariantViolation("grasp problem is incomplete");
    if (prob.contact_ids.empty()) throw EmptyInput("grasp problem has no contacts");
    if (seed.hands.empty()) throw EmptyInput("grasp seed has no hands");
    for (const auto& h : seed.hands) {
        if (h.q.size() != static_cast<size_t>(prob.hand->joint_count()))
            throw InvariantViolation("seed joint vector size mismatch");
        if (!h.wrist.translation.allFinite() || !h.wrist.rotation.coeffs().allFinite())
            throw InvariantViolation("seed pose is not finite");
    }
    const GraspConfig& cfg = prob.config;

    std::vector<HandAssignment> state = seed.hands;
    for (auto& h : state) clamp_to_limits(*prob.hand, h.q);

    ObjectiveBreakdown terms;
    double obj = grasp_objective(prob, state, &terms);
    OptimizeTrace local;
    OptimizeTrace& tr = trace ? *trace : local;
    tr.accepted.clear();
    tr.accepted.push_back(terms);
    tr.iterations = 0;
    tr.converged = false;

    for (int iter = 0; iter < cfg.max_iters; ++iter) {
        tr.iterations = iter + 1;
        const Eigen::VectorXd g = grasp_gradient(prob, state);
        const double gnorm2 = g.squaredNorm();
        if (gnorm2 < 1e-20) {
            tr.converged = true;
            break;
        }

        double s = cfg.step;
        double best_obj = obj;
        std::vector<HandAssignment> best_state;
        ObjectiveBreakdown best_terms;
        bool armijo = false;
        for (int bt = 0; bt < 60 && s > 1e-14; ++bt, s *= cfg.shrink) {
            const auto trial = grasp_detail::apply_step(*prob.hand, state, -s * g);
            ObjectiveBreakdown trial_terms;
            const double trial_obj = grasp_objective(prob, trial, &trial_terms);
            if (trial_obj < best_obj) {
                best_obj = trial_obj;
                best_state = trial;
                best_terms = trial_terms;
            }
            if (trial_obj <= obj - 1e-4 * s * gnorm2) {
                armijo = true;
                break;
            }
        }
        (void)armijo;
        if (best_state.empty()) break;  // no decrease at any step length

        const double rel = (obj - best_obj) / std::max(obj, 1e-300);
        state = std::move(best_state);
        obj = best_obj;
        tr.accepted.push_back(best_terms);
        if (rel < cfg.rel_tol) {
            tr.converged = true;
            break;
        }
    }

    if (obj > cfg.fail_objective)
        throw NoConverge("grasp objective " + std::to_string(obj) + " above threshold after " +
                         std::to_string(tr.iterations) + " iterations");

    GraspCandidate out;
    out.hands = state;
    for (size_t h = 0; h < state.size(); ++h)
        for (int cid : prob.contact_ids) out.contacts.emplace_back(static_cast<int>(h), cid);
    ObjectiveBreakdown final_terms;
    out.objective = grasp_objective(prob, state, &final_terms, &out.fit);
    out.wrench_residual = cfg.basis.lambda > 0
                              ? out.fit.residual / (cfg.basis.lambda * cfg.basis.lambda)
                              : 0.0;

    double max_depth = 0.0;
    for (const auto& h : state) {
        const auto cache = forward_kinematics(*prob.hand, h.wrist, h.q);
        for (const auto& [center, radius] : collision_spheres_world(cache))
            max_depth = std::max(
                max_depth, radius - prob.object->planes.signed_distance(center));
    }
    if (max_depth > cfg.max_penetration)
        throw NoConverge("residual hull penetration " + std::to_string(max_depth) +
                         " m exceeds the candidate budget");
    return out;
}

// Seed generator. Unimanual: hull surface samples with the palm facing the
// inward normal at a standoff. Bimanual: point pairs on opposite sides of
// the object center, one hand each.
inline std::vector<GraspCandidate> init_candidates(const GraspObject& object,
                                                   const HandModelSpec& hand,
                                                   const std::vector<int>& embodiments,
                                                   int count, Rng& rng,
                                                   double standoff = 0.08) {
    if (count < 1) throw InvariantViolation("candidate count must be >= 1");
    if (embodiments.empty() || embodiments.size() > 2)
        throw InvariantViolation("init_candidates supports one or two embodiments");

    auto sample_point = [&](Vec3& pos, Vec3& normal) {
        const PointCloud s = sample_mesh_surface(object.hull, 1, rng, true);
        pos = s.points[0];
        normal = s.normals[0];
    };
    auto place = [&](int embodiment, const Vec3& pos, const Vec3& normal) {
        HandAssignment a;
        a.embodiment = embodiment;
        const double roll = rng.uniform(0.0, 2.0 * M_PI);
        const Quat align = Quat::FromTwoVectors(hand.palm_axis, -normal);
        a.wrist.rotation =
            canonical_quat(Quat(Eigen::AngleAxisd(roll, -normal)) * align);
        a.wrist.translation =
            pos + standoff * normal - a.wrist.rotation * hand.palm_center;
        a.q = hand.open_q;
        return a;
    };

    std::vector<GraspCandidate> seeds;
    seeds.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        GraspCandidate cand;
        Vec3 p1, n1;
        sample_point(p1, n1);
        cand.hands.push_back(place(embodiments[0], p1, n1));
        if (embodiments.size() == 2) {
            Vec3 p2, n2;
            bool found = false;
            for (int tries = 0; tries < 1000 && !found; ++tries) {
                sample_point(p2, n2);
                found = (p1 - object.com).dot(p2 - object.com) < 0;
            }
            if (!found) throw DegenerateCloud("no opposite-side sample found on the hull");
            cand.hands.push_back(place(embodiments[1], p2, n2));
        }
        seeds.push_back(std::move(cand));
    }
    return seeds;
}

// Weighted pose deviation from reconstructed hand poses; the ranking key.
inline double candidate_distance(const GraspCandidate& g,
                                 const std::vector<HandAssignment>& reference,
                                 double lambda_t = 1.0, double lambda_r = 0.3) {
    if (g.hands.size() != reference.size())
        throw EmbodimentMismatch("candidate and reference cover different hand counts");
    double total = 0.0;
    for (const auto& hand : g.hands) {
        const HandAssignment* ref = nullptr;
        for (const auto& r : reference)
            if (r.embodiment == hand.embodiment) ref = &r;
        if (!ref)
            throw EmbodimentMismatch("no reference pose for embodiment " +
                                     std::to_string(hand.embodiment));
        total += lambda_t * (hand.wrist.translation - ref->wrist.translation).norm() +
                 lambda_r * rotation_geodesic_angle(hand.wrist.rotation, ref->wrist.rotation);
    }
    return total;
}

// Ascending by candidate_distance; stable, so equal keys keep input order.
inline std::vector<GraspCandidate> rank_candidates(
    std::vector<GraspCandidate> candidates, const std::vector<HandAssignment>& reference,
    double lambda_t = 1.0, double lambda_r = 0.3) {
    if (candidates.empty()) throw EmptyInput("rank_candidates needs candidates");
    std::vector<double> keys(candidates.size());
    for (size_t i = 0; i < candidates.size(); ++i)
        keys[i] = candidate_distance(candidates[i], reference, lambda_t, lambda_r);
    std::vector<size_t> order(candidates.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return keys[a] < keys[b]; });
    std::vector<GraspCandidate> sorted;
    sorted.reserve(candidates.size());
    for (size_t i : order) sorted.push_back(std::move(candidates[i]));
    return sorted;
}

// Mean displacement of the object surface cloud between the planned final
// pose (start composed with the planned relative transform) and the
// simulated final pose.
inline double stability_error(const std::vector<Vec3>& local_points, const Pose& start,
                              const Pose& planned_rel, const Pose& simulated_final) {
    if (local_points.empty()) throw EmptyInput("stability error needs surface points");
    const Pose target = pose_compose(start, planned_rel);
    double sum = 0.0;
    for (const Vec3& x : local_points)
        sum += (target.apply(x) - simulated_final.apply(x)).norm();
    return sum / static_cast<double>(local_points.size());
}

// Stability rollout interface: a physics engine can replace the surrogate.
class RolloutBackend {
  public:
    virtual ~RolloutBackend() = default;
    virtual Pose rollout(const GraspCandidate& g, const Pose& start,
                         const Pose& planned_rel) = 0;
};

// Deterministic surrogate: the planned final pose drifts along the
// unresolved wrench direction, scaled by the fitted residual. A fully
// resolved grasp reproduces the plan exactly.
class SurrogateRollout final : public RolloutBackend {
  public:
    explicit SurrogateRollout(double c_r = 0.1) : c_r_(c_r) {}

    Pose rollout(const GraspCandidate& g, const Pose& start,
                 const Pose& planned_rel) override {
        const Pose target = pose_compose(start, planned_rel);
        const Vector6d twist = c_r_ * g.wrench_residual * g.fit.unresolved;
        return pose_compose(target, se3_exp(twist));
    }

  private:
    double c_r_;
};

struct GraspSelection {
    GraspCandidate candidate;
    int index = -1;       // position in the ranked input list
    int evaluations = 0;  // rollouts performed (stops at first success)
    std::vector<double> errors;
};

// First candidate in ranked order whose rollout lands within epsilon.
inline GraspSelection select_grasp(const std::vector<GraspCandidate>& ranked,
                                   RolloutBackend& backend,
                                   const std::vector<Vec3>& local_points, const Pose& start,
                                   const Pose& planned_rel, double epsilon = 0.02) {
    if (epsilon <= 0) throw InvariantViolation("stability threshold must be positive");
    if (ranked.empty()) throw NoStableGrasp("no candidates to select from");
    GraspSelection sel;
    for (size_t i = 0; i < ranked.size(); ++i) {
        const Pose sim = backend.rollout(ranked[i], start, planned_rel);
        const double err = stability_error(local_points, start, planned_rel, sim);
        ++sel.evaluations;
        sel.errors.push_back(err);
        if (err < epsilon) {
            sel.candidate = ranked[i];
            sel.index = static_cast<int>(i);
            return sel;
        }
    }
    throw NoStableGrasp("all " + std::to_string(ranked.size()) +
                            " candidates failed the stability screen; best error " +
                            std::to_string(*std::min_element(sel.errors.begin(),
                                                             sel.errors.end())),
                        sel.errors);
}

}  // namespace dexforge
