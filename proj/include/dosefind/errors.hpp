#pragma once

#include <stdexcept>
#include <string>

namespace dosefind {

/// Base for every error raised by the engine.
class error : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

/// (rho, eta) -> (alpha, beta) is undefined: eta <= x_min, rho outside (0,1), or beta <= 0.
class singular_transform_error : public error {
   public:
    using error::error;
};

/// The posterior normalizing constant vanished even in log space.
class degenerate_posterior_error : public error {
   public:
    using error::error;
};

/// det(M) <= threshold for D-optimality, or M not invertible for c-optimality.
class singular_information_error : public error {
   public:
    using error::error;
};

/// No dose satisfies the chance constraint of a constrained optimal design.
class infeasible_constraint_error : public error {
   public:
    using error::error;
};

/// Invalid input value. `field` names the offending configuration key when known.
class validation_error : public error {
   public:
    validation_error(std::string field, const std::string& message)
        : error(field.empty() ? message : field + ": " + message), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

   private:
    std::string field_;
};

}  // namespace dosefind
