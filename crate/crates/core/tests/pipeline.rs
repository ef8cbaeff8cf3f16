use qbattery::dqpt::{critical_times, detect_cusps, CuspParams};
use qbattery::dsl::parse_model_file;
use qbattery::ensemble::{Ensemble, EvaluationScheme};
use qbattery::output::{from_csv, to_csv};
use qbattery::sweep::{build_plan, linspace, run_sweep, Observable, SweepConfig};
use qbattery::QuenchSetup;

#[test]
fn cusp_like_snr_maxima_sit_on_rate_cusps() {
    let q = QuenchSetup::tfim(0.0, 1.3);
    let ts = linspace(0.0, 5.0, 2001);
    let step = ts[1] - ts[0];
    let quad = Ensemble::new(&q, EvaluationScheme::default()).unwrap();
    let lambda: Vec<f64> = ts.iter().map(|&t| quad.rate(t).unwrap()).collect();
    let cusps = detect_cusps(&ts, &lambda, &CuspParams::default()).unwrap();
    let grid = Ensemble::new(&q, EvaluationScheme::FiniteN { modes: 2000 }).unwrap();
    let snr: Vec<f64> = ts.iter().map(|&t| grid.snr_rate(t).unwrap()).collect();
    let sharp = detect_cusps(&ts, &snr, &CuspParams::default()).unwrap();
    assert!(!sharp.is_empty());
    assert!((sharp[0] - cusps[0]).abs() <= 2.0 * step, "{sharp:?} vs {cusps:?}");
    // finite-N ringing splits later cusps into clusters a few samples wide
    for s in &sharp {
        assert!(cusps.iter().any(|c| (c - s).abs() <= 10.0 * step), "{sharp:?} vs {cusps:?}");
    }
}

#[test]
fn finite_grid_rate_approaches_quadrature_away_from_cusps() {
    let q = QuenchSetup::tfim(0.0, 1.3);
    let quad = Ensemble::new(&q, EvaluationScheme::default()).unwrap();
    let grid = Ensemble::new(&q, EvaluationScheme::FiniteN { modes: 4000 }).unwrap();
    let tc = critical_times(&q, 0).unwrap().t_c[0];
    for t in [0.3, 0.5 * tc, 1.5 * tc, 2.0] {
        let a = quad.rate(t).unwrap();
        let b = grid.rate(t).unwrap();
        assert!((a - b).abs() < 1e-6, "t={t}: {a} vs {b}");
    }
}

#[test]
fn anisotropic_model_from_text_runs_end_to_end() {
    // XY-type chain: d = (0, 2γ sin k, 2(g − cos k)), quenched in g
    let text = "\
[initial]
d2 = 2*gamma*sin(k)
d3 = 2*(g - cos(k))
param.g = 0.2
param.gamma = 0.6

[final]
d2 = 2*gamma*sin(k)
d3 = 2*(g - cos(k))
param.g = 1.5
param.gamma = 0.6

[sweep]
axis = final.g
values = 0.5, 1.5
observables = e_inf, k_star, t_c0
";
    let file = parse_model_file(text).unwrap();
    let cfg = SweepConfig::from_model_file(&file).unwrap();
    let r = run_sweep(&build_plan(&cfg).unwrap(), None).unwrap();
    assert_eq!(r.columns, vec!["final.g", "e_inf", "k_star", "t_c0"]);
    assert!(r.rows[0][2].is_nan(), "no DQPT within a phase");
    let k = r.rows[1][2];
    assert!(k > 0.0 && k < std::f64::consts::PI);
    assert!(r.rows.iter().all(|row| row[1] > 0.0));
    let back = from_csv(&to_csv(&r).unwrap()).unwrap();
    assert_eq!(back.rows[1][3].to_bits(), r.rows[1][3].to_bits());
}

#[test]
fn text_and_closed_form_tfim_agree_in_a_sweep() {
    let text = "\
[initial]
d2 = 2*sin(k)
d3 = 2*(g - cos(k))
param.g = 0
[final]
d2 = 2*sin(k)
d3 = 2*(g - cos(k))
param.g = 1.3
";
    let file = parse_model_file(text).unwrap();
    let obs = vec![Observable::EDensity, Observable::RateLambda, Observable::KStar];
    let custom = SweepConfig {
        observables: Some(obs.clone()),
        nt: Some(21),
        t1: Some(2.0),
        ..SweepConfig::from_model_file(&file).unwrap()
    };
    let tfim = SweepConfig {
        gi: Some(0.0),
        gf: Some(1.3),
        observables: Some(obs),
        nt: Some(21),
        t1: Some(2.0),
        ..Default::default()
    };
    let a = run_sweep(&build_plan(&custom).unwrap(), Some(2)).unwrap();
    let b = run_sweep(&build_plan(&tfim).unwrap(), Some(2)).unwrap();
    for (ra, rb) in a.rows.iter().zip(&b.rows) {
        for (x, y) in ra.iter().zip(rb) {
            assert!((x - y).abs() < 1e-9, "{ra:?} vs {rb:?}");
        }
    }
}
