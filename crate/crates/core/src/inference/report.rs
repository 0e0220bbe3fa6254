//! Text and CSV rendering of a [`FitReport`] in the layout of a stock
//! linear-model summary.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use super::ols::FitReport;

const P_EPS: f64 = f64::EPSILON;

pub fn signif_stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else if p < 0.1 {
        "."
    } else {
        ""
    }
}

/// Decimal exponent and number of significant digits of `x` once rounded to
/// `digits` significant digits, trailing zeros dropped.
fn scientific(x: f64, digits: usize) -> (i32, usize) {
    if x == 0.0 {
        return (0, 1);
    }
    let s = format!("{:.*e}", digits - 1, x.abs());
    let (mant, exp) = s.split_once('e').expect("exponent form");
    let sig: String = mant.chars().filter(char::is_ascii_digit).collect();
    let nsig = sig.trim_end_matches('0').len().max(1);
    (exp.parse().expect("integer exponent"), nsig)
}

fn sci_string(x: f64, mantissa_decimals: usize) -> String {
    let s = format!("{:.*e}", mantissa_decimals, x);
    let (mant, exp) = s.split_once('e').expect("exponent form");
    let e: i32 = exp.parse().expect("integer exponent");
    let sign = if e < 0 { '-' } else { '+' };
    format!("{mant}e{sign}{:02}", e.abs())
}

#[derive(Clone, Copy, PartialEq)]
enum Notation {
    Auto,
    Fixed,
    Scientific,
}

/// Formats a group of numbers with a shared number of decimals, choosing
/// between fixed and scientific notation by width the way R's `format` does.
fn format_group(values: &[f64], digits: usize, notation: Notation) -> Vec<String> {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return values.iter().map(|_| "NA".to_string()).collect();
    }
    let neg = usize::from(finite.iter().any(|v| *v < 0.0));
    let mut rgt = 0i32;
    let mut mxsl = 1i32;
    let mut mxns = 1usize;
    let mut max_exp = 0i32;
    for &v in &finite {
        let (kp, nsig) = scientific(v, digits);
        let left = kp + 1;
        let sleft = i32::from(v < 0.0) + left.max(1);
        mxsl = mxsl.max(sleft);
        rgt = rgt.max(nsig as i32 - left);
        mxns = mxns.max(nsig);
        max_exp = max_exp.max(kp.abs());
    }
    let fixed_width = mxsl + rgt + i32::from(rgt > 0);
    let sci_width = neg as i32 + if mxns > 1 { mxns as i32 + 1 } else { mxns as i32 } + if max_exp >= 100 { 5 } else { 4 };
    let fixed = match notation {
        Notation::Fixed => true,
        Notation::Scientific => false,
        Notation::Auto => fixed_width <= sci_width,
    };
    values
        .iter()
        .map(|&v| {
            if !v.is_finite() {
                "NA".to_string()
            } else if fixed {
                format!("{:.*}", rgt as usize, v)
            } else {
                sci_string(v, mxns - 1)
            }
        })
        .collect()
}

fn round_to(x: f64, decimals: i32) -> f64 {
    format!("{:.*}", decimals.clamp(0, 300) as usize, x).parse().unwrap_or(x)
}

fn format_pvalues(ps: &[f64], digits: usize) -> Vec<String> {
    let mut out = vec![String::new(); ps.len()];
    let mut groups: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &p) in ps.iter().enumerate() {
        if !p.is_finite() {
            out[i] = "NA".into();
        } else if p < P_EPS {
            out[i] = "<2e-16".into();
        } else if p >= 1e-4 {
            groups[0].push(i);
        } else {
            groups[1].push(i);
        }
    }
    for (g, notation) in groups.iter().zip([Notation::Fixed, Notation::Scientific]) {
        let vals: Vec<f64> = g.iter().map(|&i| ps[i]).collect();
        for (&i, s) in g.iter().zip(format_group(&vals, digits, notation)) {
            out[i] = s;
        }
    }
    out
}

/// C-style `%.{digits}g`.
fn format_g(x: f64, digits: usize) -> String {
    if !x.is_finite() {
        return "NaN".into();
    }
    if x == 0.0 {
        return "0".into();
    }
    let (exp, _) = scientific(x, digits);
    let strip = |s: String| {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    };
    if exp < -4 || exp >= digits as i32 {
        let s = sci_string(x, digits - 1);
        let (mant, e) = s.split_once('e').expect("exponent form");
        format!("{}e{e}", strip(mant.to_string()))
    } else {
        strip(format!("{:.*}", (digits as i32 - 1 - exp).max(0) as usize, x))
    }
}

fn format_single_pvalue(p: f64, digits: usize) -> String {
    if p < P_EPS {
        "< 2.2e-16".into()
    } else {
        format_group(&[p], digits, Notation::Auto).remove(0)
    }
}

/// Renders the coefficient table and fit statistics.
pub fn format_fit_report(fit: &FitReport) -> String {
    const DIGITS: usize = 4;
    let p = fit.coefficients.len();

    let est_se: Vec<f64> = fit.coefficients.iter().map(|c| c.estimate).chain(fit.coefficients.iter().map(|c| c.std_error)).collect();
    let nonzero_min = est_se.iter().filter(|v| v.is_finite() && **v != 0.0).map(|v| v.abs()).fold(f64::INFINITY, f64::min);
    let digmin = if nonzero_min.is_finite() { 1 + nonzero_min.log10().floor() as i32 } else { 1 };
    let decimals = (DIGITS as i32 - digmin).max(1);
    let rounded: Vec<f64> = est_se.iter().map(|v| round_to(*v, decimals)).collect();
    let cs = format_group(&rounded, DIGITS, Notation::Auto);
    let tv: Vec<f64> = fit.coefficients.iter().map(|c| round_to(c.t_value, 3)).collect();
    let ts = format_group(&tv, DIGITS, Notation::Auto);
    let ps = format_pvalues(&fit.coefficients.iter().map(|c| c.p_value).collect::<Vec<_>>(), 3);

    let headers = ["Estimate", "Std. Error", "t value", "Pr(>|t|)"];
    let cells: Vec<[&str; 4]> = (0..p).map(|i| [cs[i].as_str(), cs[p + i].as_str(), ts[i].as_str(), ps[i].as_str()]).collect();
    let widths: Vec<usize> =
        (0..4).map(|c| cells.iter().map(|r| r[c].len()).chain([headers[c].len()]).max().unwrap_or(0)).collect();
    let name_w = fit.coefficients.iter().map(|c| c.name.len()).max().unwrap_or(0);

    let mut out = String::from("Coefficients:\n");
    let _ = write!(out, "{:name_w$}", "");
    for (h, w) in headers.iter().zip(&widths) {
        let _ = write!(out, " {h:>w$}");
    }
    out.push_str("    \n");
    for (c, row) in fit.coefficients.iter().zip(&cells) {
        let _ = write!(out, "{:<name_w$}", c.name);
        for (v, w) in row.iter().zip(&widths) {
            let _ = write!(out, " {v:>w$}");
        }
        let _ = writeln!(out, " {:<3}", signif_stars(c.p_value));
    }
    out.push_str("---\nSignif. codes:  0 '***' 0.001 '**' 0.01 '*' 0.05 '.' 0.1 ' ' 1\n\n");
    let sigma = format_group(&[format_g(fit.sigma, DIGITS).parse().unwrap_or(fit.sigma)], 7, Notation::Auto).remove(0);
    let _ = writeln!(out, "Residual standard error: {sigma} on {} degrees of freedom", fit.df);
    let _ = writeln!(
        out,
        "Multiple R-squared:  {},\tAdjusted R-squared:  {} ",
        format_g(fit.r_squared, DIGITS),
        format_g(fit.adj_r_squared, DIGITS)
    );
    if fit.f_statistic.is_finite() {
        let _ = writeln!(
            out,
            "F-statistic: {} on {} and {} DF,  p-value: {}",
            format_g(fit.f_statistic, DIGITS),
            fit.f_df.0,
            fit.f_df.1,
            format_single_pvalue(fit.f_p_value, DIGITS)
        );
    }
    out
}

/// Writes the coefficient table with 95% intervals as CSV.
pub fn write_fit_csv(fit: &FitReport, path: &Path) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["term", "estimate", "std_error", "t_value", "p_value", "ci_low", "ci_high"])?;
    for (j, c) in fit.coefficients.iter().enumerate() {
        let (lo, hi) = fit.confidence_interval(j, 0.95);
        w.write_record([
            c.name.clone(),
            c.estimate.to_string(),
            c.std_error.to_string(),
            c.t_value.to_string(),
            c.p_value.to_string(),
            lo.to_string(),
            hi.to_string(),
        ])?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::ols::Coefficient;

    #[test]
    fn groups() {
        assert_eq!(format_group(&[0.4830, 1.2098, -175.865], 4, Notation::Auto), ["0.483", "1.210", "-175.865"]);
        assert_eq!(format_group(&[1.0], 7, Notation::Auto), ["1"]);
        assert_eq!(format_group(&[1.234e-10], 3, Notation::Auto), ["1.23e-10"]);
        assert_eq!(format_group(&[123456789.0], 4, Notation::Auto), ["123456789"]);
        assert_eq!(format_group(&[1234567890.0], 4, Notation::Auto), ["1.235e+09"]);
    }

    #[test]
    fn g_format() {
        assert_eq!(format_g(0.8574, 4), "0.8574");
        assert_eq!(format_g(0.83199, 4), "0.832");
        assert_eq!(format_g(33.68, 4), "33.68");
        assert_eq!(format_g(12345.0, 4), "1.234e+04");
        assert_eq!(format_g(0.00001234, 4), "1.234e-05");
        assert_eq!(format_g(2.0, 4), "2");
    }

    #[test]
    fn pvalue_groups() {
        assert_eq!(
            format_pvalues(&[0.000354, 1.06e-10, 0.283061, 1e-20, 0.5], 3),
            ["0.000354", "1.06e-10", "0.283061", "<2e-16", "0.500000"]
        );
        assert_eq!(format_single_pvalue(5.178e-11, 4), "5.178e-11");
        assert_eq!(format_single_pvalue(0.0, 4), "< 2.2e-16");
    }

    #[test]
    fn stars() {
        assert_eq!([0.0005, 0.005, 0.02, 0.07, 0.5].map(signif_stars), ["***", "**", "*", ".", ""]);
    }

    #[test]
    fn layout_is_aligned() {
        let fit = FitReport {
            coefficients: vec![
                Coefficient { name: "(Intercept)".into(), estimate: 1.5, std_error: 0.25, t_value: 6.0, p_value: 1e-5 },
                Coefficient { name: "x".into(), estimate: -0.125, std_error: 0.5, t_value: -0.25, p_value: 0.8 },
            ],
            n: 10,
            sigma: 1.0,
            df: 8,
            r_squared: 0.5,
            adj_r_squared: 0.4375,
            f_statistic: 8.0,
            f_df: (1, 8),
            f_p_value: 0.0222,
            residuals: vec![],
            fitted: vec![],
            has_intercept: true,
        };
        let text = format_fit_report(&fit);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1], "            Estimate Std. Error t value Pr(>|t|)    ");
        assert_eq!(lines[2], "(Intercept)    1.500      0.250    6.00    1e-05 ***");
        assert_eq!(lines[3], "x             -0.125      0.500   -0.25      0.8    ");
        assert_eq!(lines[7], "Residual standard error: 1 on 8 degrees of freedom");
        assert_eq!(lines[9], "F-statistic: 8 on 1 and 8 DF,  p-value: 0.0222");
    }
}
