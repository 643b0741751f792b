#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace comadice {

/// Generators of the f-divergence regularizer. All are strictly convex on
/// (0, inf) with f(1) = 0.
///
///   KL           f(x) = x ln x - x + 1       (f')^-1(y) = e^y
///   ChiSquare    f(x) = (x - 1)^2 / 2        (f')^-1(y) = y + 1
///   SoftChiSquare  KL branch on (0, 1), chi-square branch on [1, inf)
///
/// `kl_plain_generator` switches KL to the generator x ln x, whose inverse
/// derivative is e^(y - 1). That variant is kept for comparison runs only.
struct FDivergence {
  enum class Kind { KL, ChiSquare, SoftChiSquare };
  Kind kind = Kind::SoftChiSquare;
  bool kl_plain_generator = false;

  static FDivergence kl() { return {Kind::KL, false}; }
  static FDivergence chi2() { return {Kind::ChiSquare, false}; }
  static FDivergence soft_chi2() { return {Kind::SoftChiSquare, false}; }

  bool operator==(const FDivergence&) const = default;
};

/// Exponent arguments are clamped to this bound before exponentiation.
inline constexpr double kMaxExponent = 30.0;

namespace detail {
inline std::atomic<std::uint64_t>& saturation_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

template <typename Scalar>
Scalar guarded_exp(const Scalar& y) {
  using std::exp;
  if (y > Scalar(kMaxExponent)) {
    saturation_counter().fetch_add(1, std::memory_order_relaxed);
    return Scalar(exp(kMaxExponent));
  }
  return exp(y);
}
}  // namespace detail

/// Number of exponent clamps since start (or the last reset).
inline std::uint64_t exp_saturation_count() { return detail::saturation_counter().load(); }
inline void reset_exp_saturation_count() { detail::saturation_counter().store(0); }

inline FDivergence parse_divergence(std::string_view token) {
  if (token == "kl") return FDivergence::kl();
  if (token == "chi2") return FDivergence::chi2();
  if (token == "soft-chi2") return FDivergence::soft_chi2();
  throw std::invalid_argument("unknown divergence '" + std::string(token) +
                              "' (expected kl | chi2 | soft-chi2)");
}

inline std::string divergence_token(const FDivergence& d) {
  switch (d.kind) {
    case FDivergence::Kind::KL: return "kl";
    case FDivergence::Kind::ChiSquare: return "chi2";
    case FDivergence::Kind::SoftChiSquare: return "soft-chi2";
  }
  return "?";
}

template <typename Scalar>
Scalar f_value(const FDivergence& d, const Scalar& x) {
  using std::log;
  if (x < Scalar(0)) throw std::domain_error("f_value: negative argument");
  auto kl = [&](const Scalar& t) -> Scalar {
    if (t == Scalar(0)) return d.kl_plain_generator ? Scalar(0) : Scalar(1);
    return d.kl_plain_generator ? Scalar(t * log(t)) : Scalar(t * log(t) - t + Scalar(1));
  };
  auto chi = [](const Scalar& t) -> Scalar { return Scalar(0.5) * (t - Scalar(1)) * (t - Scalar(1)); };
  switch (d.kind) {
    case FDivergence::Kind::KL: return kl(x);
    case FDivergence::Kind::ChiSquare: return chi(x);
    case FDivergence::Kind::SoftChiSquare:
      if (x < Scalar(1)) {
        if (x == Scalar(0)) return Scalar(1);
        return x * log(x) - x + Scalar(1);
      }
      return chi(x);
  }
  return Scalar(0);
}

/// f'(x) for x > 0.
template <typename Scalar>
Scalar f_prime(const FDivergence& d, const Scalar& x) {
  using std::log;
  switch (d.kind) {
    case FDivergence::Kind::KL: return d.kl_plain_generator ? Scalar(log(x) + Scalar(1)) : Scalar(log(x));
    case FDivergence::Kind::ChiSquare: return x - Scalar(1);
    case FDivergence::Kind::SoftChiSquare: return x < Scalar(1) ? Scalar(log(x)) : Scalar(x - Scalar(1));
  }
  return Scalar(0);
}

/// f''(x) for x > 0.
template <typename Scalar>
Scalar f_second(const FDivergence& d, const Scalar& x) {
  switch (d.kind) {
    case FDivergence::Kind::KL: return Scalar(1) / x;
    case FDivergence::Kind::ChiSquare: return Scalar(1);
    case FDivergence::Kind::SoftChiSquare: return x < Scalar(1) ? Scalar(Scalar(1) / x) : Scalar(1);
  }
  return Scalar(0);
}

/// (f')^-1(y). Total on the reals; the chi-square branch may be negative and
/// clamping to the feasible t >= 0 is left to `w_star`.
template <typename Scalar>
Scalar f_prime_inv(const FDivergence& d, const Scalar& y) {
  switch (d.kind) {
    case FDivergence::Kind::KL:
      return d.kl_plain_generator ? detail::guarded_exp(Scalar(y - Scalar(1))) : detail::guarded_exp(y);
    case FDivergence::Kind::ChiSquare: return y + Scalar(1);
    case FDivergence::Kind::SoftChiSquare:
      return y < Scalar(0) ? detail::guarded_exp(y) : Scalar(y + Scalar(1));
  }
  return Scalar(0);
}

/// f*(y) = sup_{t >= 0} { t y - f(t) }.
template <typename Scalar>
Scalar f_conjugate(const FDivergence& d, const Scalar& y) {
  switch (d.kind) {
    case FDivergence::Kind::KL:
      return d.kl_plain_generator ? detail::guarded_exp(Scalar(y - Scalar(1)))
                                : Scalar(detail::guarded_exp(y) - Scalar(1));
    case FDivergence::Kind::ChiSquare:
      return y < Scalar(-1) ? Scalar(-0.5) : Scalar(y + Scalar(0.5) * y * y);
    case FDivergence::Kind::SoftChiSquare:
      return y < Scalar(0) ? Scalar(detail::guarded_exp(y) - Scalar(1))
                           : Scalar(y + Scalar(0.5) * y * y);
  }
  return Scalar(0);
}

/// (f*)'(y) = argmax_{t >= 0} { t y - f(t) } = max{0, (f')^-1(y)}.
template <typename Scalar>
Scalar f_conjugate_prime(const FDivergence& d, const Scalar& y) {
  Scalar t = f_prime_inv(d, y);
  return t < Scalar(0) ? Scalar(0) : t;
}

/// (f*)''(y); zero on the clamped chi-square region.
template <typename Scalar>
Scalar f_conjugate_second(const FDivergence& d, const Scalar& y) {
  switch (d.kind) {
    case FDivergence::Kind::KL:
      return d.kl_plain_generator ? detail::guarded_exp(Scalar(y - Scalar(1))) : detail::guarded_exp(y);
    case FDivergence::Kind::ChiSquare: return y < Scalar(-1) ? Scalar(0) : Scalar(1);
    case FDivergence::Kind::SoftChiSquare: return y < Scalar(0) ? detail::guarded_exp(y) : Scalar(1);
  }
  return Scalar(0);
}

/// Closed-form occupancy ratio: max{0, (f')^-1(advantage / alpha)}.
template <typename Scalar>
Scalar w_star(const FDivergence& d, const Scalar& advantage, double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("w_star: alpha must be positive");
  return f_conjugate_prime(d, Scalar(advantage / alpha));
}

}  // namespace comadice
