use std::path::PathBuf;

use mobiscope_core::inference::{format_fit_report, ols_fit, Coefficient, FitReport, DESIGN_COLUMNS};

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/fit_report.txt")
}

// Fixed synthetic design: 34 communes, deterministic covariates and noise.
fn synthetic_fit() -> FitReport {
    let n = 34;
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for i in 0..n {
        let t = i as f64;
        let mob_in = 4.0 + (t * 0.37).sin() * 2.0 + t * 0.05;
        let mob_out = 3.0 + (t * 0.61).cos() * 1.5;
        let flow = ((t * 1.3).sin() + 1.0) * 0.8;
        let score = 40.0 + (t * 0.23).cos() * 25.0;
        let noise = ((t * 12.9898).sin() * 43758.5453).fract() * 40.0 - 20.0;
        rows.push(vec![1.0, mob_in, mob_out, flow, score, mob_out * flow]);
        y.push(-175.0 + 22.5 * mob_in + 7.0 * mob_out + 51.0 * flow + 1.2 * score - 7.3 * mob_out * flow + noise);
    }
    let names: Vec<String> = DESIGN_COLUMNS.iter().map(|s| s.to_string()).collect();
    ols_fit(&names, &rows, &y).unwrap()
}

#[test]
fn synthetic_fit_matches_golden_file() {
    let text = format_fit_report(&synthetic_fit());
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(golden_path(), &text).unwrap();
    }
    let golden = std::fs::read_to_string(golden_path()).unwrap();
    assert_eq!(text, golden);
}

fn tokens(s: &str) -> Vec<Vec<String>> {
    s.lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect::<Vec<_>>())
        .filter(|l| !l.is_empty())
        .collect()
}

// Published estimates re-rendered must reproduce the published block token for token.
#[test]
fn published_numbers_render_identically() {
    let published = "\
Coefficients:
                            Estimate Std. Error t value Pr(>|t|)    
(Intercept)                 -175.865     43.281  -4.063 0.000354 ***
MobIn                         22.627      2.272   9.957 1.06e-10 ***
MobOut                         6.989      6.385   1.095 0.283061    
Flow                          51.454     12.228   4.208 0.000240 ***
Score                          1.210      0.483   2.506 0.018292 *  
MobOut:Flow                   -7.276      1.738  -4.186 0.000255 ***
---
Signif. codes:  0 '***' 0.001 '**' 0.01 '*' 0.05 '.' 0.1 ' ' 1

Residual standard error: 25.67 on 28 degrees of freedom
Multiple R-squared:  0.8574,\tAdjusted R-squared:  0.832 
F-statistic: 33.68 on 5 and 28 DF,  p-value: 5.178e-11
";
    let table = [
        (-175.865, 43.281, -4.063, 0.000354),
        (22.627, 2.272, 9.957, 1.06e-10),
        (6.989, 6.385, 1.095, 0.283061),
        (51.454, 12.228, 4.208, 0.000240),
        (1.210, 0.483, 2.506, 0.018292),
        (-7.276, 1.738, -4.186, 0.000255),
    ];
    let (n, p) = (34usize, 6usize);
    let r2 = 0.85744;
    let adj = 1.0 - (1.0 - r2) * (n - 1) as f64 / (n - p) as f64;
    let fit = FitReport {
        coefficients: DESIGN_COLUMNS
            .iter()
            .zip(table)
            .map(|(name, (estimate, std_error, t_value, p_value))| Coefficient {
                name: name.to_string(),
                estimate,
                std_error,
                t_value,
                p_value,
            })
            .collect(),
        n,
        sigma: 25.67,
        df: n - p,
        r_squared: r2,
        adj_r_squared: adj,
        f_statistic: (r2 / 5.0) / ((1.0 - r2) / 28.0),
        f_df: (5, 28),
        f_p_value: 5.178e-11,
        residuals: vec![],
        fitted: vec![],
        has_intercept: true,
    };
    let ours = format_fit_report(&fit);
    assert_eq!(tokens(&ours), tokens(published));
    // the R-squared line keeps its tab and trailing space
    assert!(ours.contains("Multiple R-squared:  0.8574,\tAdjusted R-squared:  0.832 \n"));
}
