#pragma once

#include <string>

namespace bhedge {

// Parametric coefficient c + cx*x + cs*s1 + ct*t. The mean-reverting form
// kappa*(level - x) is stored in the same affine slots.
struct Coefficient {
    enum class Form { constant, affine, mean_reverting };

    Form form = Form::constant;
    double c = 0.0, cx = 0.0, cs = 0.0, ct = 0.0;
    double kappa = 0.0, level = 0.0;

    static Coefficient constant(double v) {
        Coefficient k;
        k.c = v;
        return k;
    }
    static Coefficient affine(double c, double cx, double cs = 0.0, double ct = 0.0) {
        Coefficient k;
        k.form = Form::affine;
        k.c = c;
        k.cx = cx;
        k.cs = cs;
        k.ct = ct;
        return k;
    }
    static Coefficient mean_reverting(double kappa, double level) {
        Coefficient k;
        k.form = Form::mean_reverting;
        k.kappa = kappa;
        k.level = level;
        k.c = kappa * level;
        k.cx = -kappa;
        return k;
    }

    double operator()(double t, double x, double s1 = 0.0) const { return c + cx * x + cs * s1 + ct * t; }

    bool uses_t() const { return ct != 0.0; }
    bool uses_x() const { return cx != 0.0; }
    bool uses_s1() const { return cs != 0.0; }
    bool is_zero() const { return c == 0.0 && cx == 0.0 && cs == 0.0 && ct == 0.0; }
};

const char* form_name(Coefficient::Form f);

} // namespace bhedge
