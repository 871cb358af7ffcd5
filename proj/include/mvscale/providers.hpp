#pragma once

#include <memory>
#include <span>

#include "mvscale/linalg.hpp"
#include "mvscale/model.hpp"

namespace mvscale {

// Source of the averaged drift bbar(x, mu). Implementations must be pure
// functions of their arguments (thread-safe, schedule-independent).
class BbarProvider {
public:
    virtual ~BbarProvider() = default;
    virtual void eval(std::span<const double> x, const measure::MeasureView& mu,
                      std::span<double> out) const = 0;
    // true when eval carries no Monte Carlo noise
    virtual bool exact() const { return false; }
};

// Uses the model's closed-form averaged drift.
class AnalyticBbarProvider final : public BbarProvider {
public:
    explicit AnalyticBbarProvider(std::shared_ptr<const model::CoefficientSet> coeffs)
        : coeffs_(std::move(coeffs)) {
        require(coeffs_->has_analytic_oracle(),
                "AnalyticBbarProvider: model has no analytic averaged drift");
    }
    void eval(std::span<const double> x, const measure::MeasureView& mu,
              std::span<double> out) const override {
        coeffs_->averaged_drift(x, mu, out);
    }
    bool exact() const override { return true; }

private:
    std::shared_ptr<const model::CoefficientSet> coeffs_;
};

// For models whose slow drift does not depend on the fast state: bbar == b.
class YIndependentBbarProvider final : public BbarProvider {
public:
    explicit YIndependentBbarProvider(std::shared_ptr<const model::CoefficientSet> coeffs)
        : coeffs_(std::move(coeffs)), zero_y_(coeffs_->dims().m, 0.0) {}
    void eval(std::span<const double> x, const measure::MeasureView& mu,
              std::span<double> out) const override {
        coeffs_->b(x, mu, zero_y_, out);
    }
    bool exact() const override { return true; }

private:
    std::shared_ptr<const model::CoefficientSet> coeffs_;
    Vec zero_y_;
};

// Source of the fluctuation diffusion Theta(x, mu) as an n x n matrix.
class ThetaProvider {
public:
    virtual ~ThetaProvider() = default;
    virtual void eval(std::span<const double> x, const measure::MeasureView& mu,
                      std::span<double> out) const = 0;
};

class ConstantThetaProvider final : public ThetaProvider {
public:
    explicit ConstantThetaProvider(linalg::Matrix theta) : theta_(std::move(theta)) {}
    static ConstantThetaProvider scalar(double v) {
        linalg::Matrix m(1, 1);
        m(0, 0) = v;
        return ConstantThetaProvider(std::move(m));
    }
    void eval(std::span<const double>, const measure::MeasureView&,
              std::span<double> out) const override {
        for (size_t i = 0; i < out.size(); ++i) out[i] = theta_.data[i];
    }

private:
    linalg::Matrix theta_;
};

}  // namespace mvscale
