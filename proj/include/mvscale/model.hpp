#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <utility>

#include "mvscale/common.hpp"
#include "mvscale/measure.hpp"

namespace mvscale::model {

using measure::MeasureView;

struct Dims {
    int n = 1;   // slow state
    int m = 1;   // fast state
    int d1 = 1;  // slow noise channels
    int d2 = 1;  // fast noise channels
};

// The pluggable coefficient surface of the two-time-scale system
//
//   dX = b(X, mu, Y) dt + sigma(X, mu) dW1
//   dY = (1/eps) f(X, mu, Y) dt + (1/sqrt(eps)) g(X, mu, Y) dW2
//
// where mu is the law of the slow component (here: the ensemble empirical
// measure). Implementations must be immutable after construction and safe to
// evaluate from concurrent workers. All outputs must be finite on finite
// inputs.
class CoefficientSet {
public:
    explicit CoefficientSet(Dims dims) : dims_(dims) {}
    virtual ~CoefficientSet() = default;

    const Dims& dims() const { return dims_; }

    virtual void b(std::span<const double> x, const MeasureView& mu,
                   std::span<const double> y, std::span<double> out) const = 0;
    // sigma: n x d1, row-major
    virtual void sigma(std::span<const double> x, const MeasureView& mu,
                       std::span<double> out) const = 0;
    virtual void f(std::span<const double> x, const MeasureView& mu,
                   std::span<const double> y, std::span<double> out) const = 0;
    // g: m x d2, row-major
    virtual void g(std::span<const double> x, const MeasureView& mu,
                   std::span<const double> y, std::span<double> out) const = 0;

    // --- optional analytic averaged-equation surface -----------------------
    // Available when the frozen equation's invariant average of b is known in
    // closed form, along with the derivatives driving the limiting SDE.
    virtual bool has_analytic_oracle() const { return false; }

    // averaged drift: x, mu -> R^n
    virtual void averaged_drift(std::span<const double>, const MeasureView&,
                                std::span<double>) const {
        throw StructuralError("model has no analytic averaged drift");
    }
    // d(averaged drift)/dx: n x n
    virtual void averaged_drift_dx(std::span<const double>, const MeasureView&,
                                   std::span<double>) const {
        throw StructuralError("model has no analytic averaged-drift Jacobian");
    }
    // Lions-derivative kernel of the averaged drift, evaluated at cloud point
    // z: (u, mu, z) -> n x n
    virtual void averaged_drift_dmu(std::span<const double>, const MeasureView&,
                                    std::span<const double>, std::span<double>) const {
        throw StructuralError("model has no analytic averaged-drift measure derivative");
    }
    // true when sigma(x, mu) is constant; lets the fluctuation integrator
    // skip the sigma-derivative diffusion terms (both built-ins qualify)
    virtual bool sigma_is_constant() const { return true; }

    // directional derivative of sigma in x along dir: n x d1
    virtual void sigma_dx(std::span<const double>, const MeasureView&,
                          std::span<const double>, std::span<double> out) const {
        for (auto& v : out) v = 0.0;
    }
    // Lions derivative of sigma at cloud point z along dir: n x d1
    virtual void sigma_dmu(std::span<const double>, const MeasureView&,
                           std::span<const double>, std::span<const double>,
                           std::span<double> out) const {
        for (auto& v : out) v = 0.0;
    }

    // Mean-field drift rows of the fluctuation particle system: for every i,
    //   out_i = (1/N) sum_j averaged_drift_dmu(u = point_i, mu)(point_j) * v_j,
    // where the cloud points are mu's points and vs holds the fluctuation
    // states (count x n). Generic implementation is O(N^2); models with a
    // point-independent kernel override with the O(N) form.
    virtual void fluctuation_meanfield(const MeasureView& mu, const double* vs,
                                       double* out) const;

    // Same contraction for sigma's Lions derivative (n x d1 per particle,
    // out is count x n x d1); only consulted when !sigma_is_constant().
    virtual void fluctuation_meanfield_sigma(const MeasureView& mu, const double* vs,
                                             double* out) const;

private:
    Dims dims_;
};

// ---------------------------------------------------------------------------
// Linear benchmark model (1-d slow, 1-d fast):
//   b = a1 x + a2 <mu> + a3 y,   sigma = sigma0,
//   f = -y + c1 x + c2 <mu>,     g = g0,
// where <mu> is the mean of mu. The fast equation is an OU process, so every
// averaged quantity has a closed form; the dissipativity margin is exactly 2.
struct LinearModelParams {
    double a1 = -1.0;
    double a2 = 0.5;
    double a3 = 1.0;
    double c1 = 0.5;
    double c2 = 0.25;
    double sigma0 = 0.3;
    double g0 = 1.0;
};

std::shared_ptr<const CoefficientSet> linear_model(const LinearModelParams& p);

// Closed forms for the linear model (frozen OU stationary law).
double oracle_bbar(const LinearModelParams& p, double x, double mean);
double oracle_bbar_dx(const LinearModelParams& p);    // a1 + a3 c1
double oracle_bbar_dmu(const LinearModelParams& p);   // a2 + a3 c2
// stationary mean and variance of the frozen equation
std::pair<double, double> oracle_frozen_invariant(const LinearModelParams& p, double x,
                                                  double mean);
double oracle_phi(const LinearModelParams& p, double x, double mean, double y);
double oracle_theta(const LinearModelParams& p);
// variance of the limiting fluctuation process at time t (zero initial value)
double oracle_clt_variance(const LinearModelParams& p, double t);

// ---------------------------------------------------------------------------
// Convolution model: measure dependence enters through smooth convolution
// kernels F(x, mu, y) = integral of F0(x + z, y) mu(dz), with
//   b = ab * <tanh(x+.)>_mu + by * tanh(y),  sigma = sigma0,
//   f = -kappa y + cf * <sin(x+.)>_mu,       g = g0 (1 + gy tanh(y)).
// All base functions have bounded, Lipschitz derivatives of every order used,
// so the smoothness assumptions hold by construction (documented, not
// machine-checked). Margin: 2 kappa - 5 (g0 gy)^2 > 0 for the defaults.
struct ConvolutionModelParams {
    double ab = 0.5;
    double by = 0.5;
    double cf = 0.5;
    double kappa = 1.0;
    double g0 = 1.0;
    double gy = 0.1;
    double sigma0 = 0.3;
};

std::shared_ptr<const CoefficientSet> convolution_model(const ConvolutionModelParams& p);

// ---------------------------------------------------------------------------
// Ad-hoc model from callables; test and experiment scaffolding.
class CallbackModel final : public CoefficientSet {
public:
    using Fn3 = std::function<void(std::span<const double>, const MeasureView&,
                                   std::span<const double>, std::span<double>)>;
    using Fn2 = std::function<void(std::span<const double>, const MeasureView&,
                                   std::span<double>)>;

    CallbackModel(Dims dims, Fn3 b, Fn2 sigma, Fn3 f, Fn3 g)
        : CoefficientSet(dims), b_(std::move(b)), sigma_(std::move(sigma)),
          f_(std::move(f)), g_(std::move(g)) {}

    void b(std::span<const double> x, const MeasureView& mu, std::span<const double> y,
           std::span<double> out) const override { b_(x, mu, y, out); }
    void sigma(std::span<const double> x, const MeasureView& mu,
               std::span<double> out) const override { sigma_(x, mu, out); }
    void f(std::span<const double> x, const MeasureView& mu, std::span<const double> y,
           std::span<double> out) const override { f_(x, mu, y, out); }
    void g(std::span<const double> x, const MeasureView& mu, std::span<const double> y,
           std::span<double> out) const override { g_(x, mu, y, out); }

private:
    Fn3 b_;
    Fn2 sigma_;
    Fn3 f_;
    Fn3 g_;
};

// ---------------------------------------------------------------------------
// Empirical check of the fast-equation dissipativity margin: the infimum over
// sampled (x, mu, y1, y2) of
//   -[ 2 <f(x,mu,y1)-f(x,mu,y2), y1-y2> + 5 ||g(x,mu,y1)-g(x,mu,y2)||^2 ] / |y1-y2|^2.
// A positive value is necessary evidence for the contraction condition.
struct ProbeOptions {
    double box_halfwidth = 2.0;   // sampling box for x, y and measure points
    int measure_points = 8;       // cloud size for sampled measures
};

double dissipativity_probe(const CoefficientSet& coeffs, int sample_count,
                           std::uint64_t seed, const ProbeOptions& opts = {});

}  // namespace mvscale::model
