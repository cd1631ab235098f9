use nalgebra::{DMatrix, DVector};
use syntwin_core::dpvi::{train, DpviConfig};
use syntwin_core::pooling::{assemble_combined_sets, AccountantSummary, SyntheticRelease};
use syntwin_core::tabular::{synthesize_population, PartySpec, PopulationConfig};

fn main() {
    let mut pop = PopulationConfig::desk8();
    pop.parties = (0..3)
        .map(|i| PartySpec { name: format!("party_{:02}", i + 1), size: 600, shift: 0.2 })
        .collect();
    let parties = synthesize_population(&pop, 1).unwrap();
    let mut releases = Vec::new();
    for (name, ds) in &parties {
        let (train_ds, _) = ds.train_test_split(0.8, 42).unwrap();
        let out = train(&train_ds, &DpviConfig { iterations: 20, components: 2, seed: 7, ..Default::default() }).unwrap();
        let sets: Vec<_> = (0..3).map(|k| out.posterior.draw_generator(1000 + k).unwrap().sample(train_ds.len(), 2000 + k)).collect();
        releases.push(SyntheticRelease::new(name.clone(), sets, AccountantSummary {
            party: name.clone(), n: train_ds.len(), subsample_rate: 0.2,
            noise_multiplier: out.accountant.noise_multiplier, steps: 20,
            epsilon_spent: out.epsilon_spent, delta: out.delta, budget_epsilon: 1.0, seed: 7,
        }).unwrap());
    }
    let local = parties[0].1.subsample(0.3, 5).unwrap();
    let sets = assemble_combined_sets(&local, &releases, 3).unwrap();
    let (x, y) = sets[0].one_hot().unwrap();

    // replicate the fisher loop with tracing
    let n = x.nrows(); let p = x.ncols();
    let mut w = DVector::<f64>::zeros(p);
    let ll_of = |w: &DVector<f64>| -> f64 {
        let eta = &x * w;
        (0..n).map(|i| y[i] * eta[i] - eta[i].exp()).sum()
    };
    let mut ll = ll_of(&w);
    for it in 1..=20 {
        let eta = &x * &w;
        let lambda = eta.map(f64::exp);
        let score = x.transpose() * (&y - &lambda);
        let mut info = DMatrix::<f64>::zeros(p, p);
        for i in 0..n {
            let li = lambda[i];
            for a in 0..p {
                let xa = x[(i, a)] * li;
                if xa == 0.0 { continue; }
                for b in 0..p { info[(a, b)] += xa * x[(i, b)]; }
            }
        }
        let chol = info.clone().cholesky().unwrap();
        let dir = chol.solve(&score);
        let mut step = 1.0; let mut accepted = false; let mut halvings = 0;
        for _ in 0..30 {
            let cand = &w + step * &dir;
            let cll = ll_of(&cand);
            if cll.is_finite() && cll >= ll - 1e-12 {
                w = cand; ll = cll; accepted = true; break;
            }
            step *= 0.5; halvings += 1;
        }
        println!("it={it} max|score|={:.3e} ll={ll:.9} halvings={halvings} accepted={accepted} step={step:.2e}", score.amax());
        if !accepted { println!("STUCK"); break; }
    }
}
