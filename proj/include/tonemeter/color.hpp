// CIELAB color math: sRGB <-> Lab conversions (D65, 2 degree observer),
// individual typology angle, delta E 1976, and ITA band lookup.
#pragma once

#include <array>
#include <cmath>
#include <cstddef>

#include "tonemeter/common.hpp"

namespace tonemeter {

struct LabColor {
    double L = 0.0;  // lightness, 0..100
    double a = 0.0;  // green-red axis
    double b = 0.0;  // blue-yellow axis
};

struct SrgbColor {
    double r = 0.0;  // nonlinear sRGB, 0..1
    double g = 0.0;
    double b = 0.0;
};

struct ItaDegrees {
    double degrees = 0.0;
};

// Individual typology angle in degrees. Two-argument arctangent, so b*=0
// gives +-90 and (L*=50, b*=0) gives 0. Independent of a*.
inline ItaDegrees ita(const LabColor& c) {
    return ItaDegrees{std::atan2(c.L - 50.0, c.b) * 180.0 / M_PI};
}

// CIE delta E 1976: Euclidean distance in Lab.
inline double delta_e_1976(const LabColor& x, const LabColor& y) {
    double dL = x.L - y.L;
    double da = x.a - y.a;
    double db = x.b - y.b;
    return std::sqrt(dL * dL + da * da + db * db);
}

namespace detail {

// sRGB transfer function and D65 constants. Standard values; the linear
// segment threshold pair is 0.0031308 / 0.04045.
inline double srgb_to_linear(double v) {
    return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
}

inline double linear_to_srgb(double v) {
    return v <= 0.0031308 ? v * 12.92 : 1.055 * std::pow(v, 1.0 / 2.4) - 0.055;
}

constexpr double kWhiteX = 0.95047;
constexpr double kWhiteY = 1.0;
constexpr double kWhiteZ = 1.08883;

constexpr double kLabDelta = 6.0 / 29.0;

inline double lab_f(double t) {
    constexpr double d3 = kLabDelta * kLabDelta * kLabDelta;
    return t > d3 ? std::cbrt(t) : t / (3.0 * kLabDelta * kLabDelta) + 4.0 / 29.0;
}

inline double lab_f_inv(double t) {
    return t > kLabDelta ? t * t * t : 3.0 * kLabDelta * kLabDelta * (t - 4.0 / 29.0);
}

}  // namespace detail

inline LabColor srgb_to_lab(const SrgbColor& c) {
    double rl = detail::srgb_to_linear(c.r);
    double gl = detail::srgb_to_linear(c.g);
    double bl = detail::srgb_to_linear(c.b);

    double x = 0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl;
    double y = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl;
    double z = 0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl;

    double fx = detail::lab_f(x / detail::kWhiteX);
    double fy = detail::lab_f(y / detail::kWhiteY);
    double fz = detail::lab_f(z / detail::kWhiteZ);

    return LabColor{116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

struct SrgbConversion {
    SrgbColor color;
    bool clamped = false;  // true if any channel fell outside [0,1]
};

// Lab -> sRGB. Out-of-gamut channels are clamped to [0,1] and flagged.
// Overshoot within 1e-6 of the range is snapped silently; the printed
// conversion matrices are not exact inverses and leave ~1e-7 of noise at
// the gamut boundary.
inline SrgbConversion lab_to_srgb(const LabColor& c) {
    double fy = (c.L + 16.0) / 116.0;
    double fx = fy + c.a / 500.0;
    double fz = fy - c.b / 200.0;

    double x = detail::kWhiteX * detail::lab_f_inv(fx);
    double y = detail::kWhiteY * detail::lab_f_inv(fy);
    double z = detail::kWhiteZ * detail::lab_f_inv(fz);

    double rl = 3.2404542 * x - 1.5371385 * y - 0.4985314 * z;
    double gl = -0.9692660 * x + 1.8760108 * y + 0.0415560 * z;
    double bl = 0.0556434 * x - 0.2040259 * y + 1.0572252 * z;

    SrgbConversion out;
    double chans[3] = {detail::linear_to_srgb(rl), detail::linear_to_srgb(gl),
                       detail::linear_to_srgb(bl)};
    for (double& v : chans) {
        if (v < 0.0 || v > 1.0) {
            if (v < -1e-6 || v > 1.0 + 1e-6) out.clamped = true;
            v = v < 0.0 ? 0.0 : 1.0;
        }
    }
    out.color = SrgbColor{chans[0], chans[1], chans[2]};
    return out;
}

// Five strictly decreasing ITA thresholds separating the six bands.
// Defaults follow the common dermatology convention. These are config data:
// reports label results derived from them as "ITA-band", never clinical
// Fitzpatrick.
struct ItaBands {
    std::array<double, 5> thresholds{55.0, 41.0, 28.0, 10.0, -30.0};

    void validate() const {
        for (size_t i = 1; i < thresholds.size(); ++i) {
            if (!(thresholds[i] < thresholds[i - 1])) {
                throw validation_error("ITA band thresholds must be strictly decreasing");
            }
        }
    }
};

// Band index 1..6; band i means ita > thresholds[i-1] (strict) and
// ita <= thresholds[i-2] when i > 1.
inline int ita_to_fitzpatrick(ItaDegrees angle, const ItaBands& bands = ItaBands{}) {
    bands.validate();
    for (size_t i = 0; i < bands.thresholds.size(); ++i) {
        if (angle.degrees > bands.thresholds[i]) return static_cast<int>(i) + 1;
    }
    return 6;
}

}  // namespace tonemeter
