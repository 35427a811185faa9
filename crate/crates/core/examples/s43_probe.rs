use tailcause::experiments::StudyConfig;
use tailcause::gam::{fit_gev_margin, SmoothFormula, Smoothing};
use tailcause::scm::{gen_environment, ScmConfig, Study};
use tailcause::seed::rng_from;

fn main() {
    let cfg = StudyConfig::new(Study::S43);
    let scm = ScmConfig::S43 { a: 0.0, tau: 50 };
    let n = 1000usize;
    let mut fails = 0;
    for rep in 0..20u64 {
        let mut pooled_rows: Vec<Vec<f64>> = Vec::new();
        let mut pooled_z1: Vec<f64> = Vec::new();
        let mut pooled_z2: Vec<f64> = Vec::new();
        for e in 1..=3usize {
            let mut rng = rng_from(cfg.master_seed, &[43, 0, rep, e as u64]);
            let ds = gen_environment(&scm, e, n, &mut rng).unwrap();
            let m = ds.block_maxima_raw().unwrap();
            for row in &ds.x {
                pooled_rows.push(vec![row[1]]);
            }
            for (a, b) in m {
                pooled_z1.push(a);
                pooled_z2.push(b);
            }
        }
        let f = SmoothFormula::default().with_smooth(0);
        let smoothing = Smoothing::Gcv;
        let r1 = fit_gev_margin(&pooled_z1, &pooled_rows, &f, &f, &smoothing);
        let r2 = fit_gev_margin(&pooled_z2, &pooled_rows, &f, &f, &smoothing);
        match (&r1, &r2) {
            (Ok(m1), Ok(m2)) => {
                let s1 = &m1.shape;
                let s2 = &m2.shape;
                println!("rep {rep}: ok shapes {s1:?} {s2:?}");
            }
            _ => {
                fails += 1;
                if let Err(e) = &r1 {
                    println!("rep {rep}: z1 FAIL {e}");
                }
                if let Err(e) = &r2 {
                    println!("rep {rep}: z2 FAIL {e}");
                }
            }
        }
    }
    println!("total failing reps: {fails}/20");
}
