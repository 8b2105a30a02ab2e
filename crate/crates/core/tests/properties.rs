use proptest::prelude::*;

use crossdiff::diagnostics::record;
use crossdiff::experiments::{h1_distance, BarenblattSetup};
use crossdiff::grid::{div_flux, face_mobilities, laplacian};
use crossdiff::linalg::LinearSystem;
use crossdiff::model::{quadratic_form_nonneg, reaction_bound, reaction_rates, theta_p, SolverKind};
use crossdiff::scheme::{picard_advance, run, DtPolicy};
use crossdiff::{Field, Grid, GrowthModel, Params, State};

fn grid_strategy() -> impl Strategy<Value = Grid> {
    prop_oneof![
        (2usize..40, 0.1f64..5.0).prop_map(|(n, l)| Grid::new_1d(n, l).unwrap()),
        (2usize..12, 2usize..12, 0.1f64..3.0, 0.1f64..3.0).prop_map(|(a, b, x, y)| Grid::new_2d(a, b, x, y).unwrap()),
    ]
}

fn field(grid: &Grid, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, grid.cell_count())
}

fn grid_and_fields() -> impl Strategy<Value = (Grid, Vec<f64>, Vec<f64>)> {
    grid_strategy().prop_flat_map(|g| {
        let a = field(&g, 0.0, 1.0);
        let b = field(&g, 0.0, 1.0);
        (Just(g), a, b)
    })
}

proptest! {
    #[test]
    fn theta_is_idempotent_monotone_lipschitz(a in -3.0f64..3.0, b in -3.0f64..3.0, wp in 0.01f64..5.0) {
        let ta = theta_p(a, wp).unwrap();
        let tb = theta_p(b, wp).unwrap();
        prop_assert_eq!(theta_p(ta, wp).unwrap(), ta);
        prop_assert!((0.0..=wp).contains(&ta));
        if a <= b {
            prop_assert!(ta <= tb);
        }
        prop_assert!((ta - tb).abs() <= (a - b).abs());
    }

    #[test]
    fn div_flux_sums_to_zero((g, mob, f) in grid_and_fields(), power in 1.0f64..4.0) {
        let d = div_flux(&mob, &f, power, &g);
        let vol = g.cell_volume();
        let total: f64 = d.iter().map(|v| v * vol).sum();
        let scale: f64 = d.iter().map(|v| (v * vol).abs()).sum::<f64>().max(1e-300);
        prop_assert!(total.abs() <= 1e-13 * scale, "{total} vs {scale}");
    }

    #[test]
    fn combined_mobility_is_exact((g, u1, u2) in grid_and_fields(), mu in 0.1f64..5.0, nu in 0.1f64..5.0, gamma in 1.01f64..4.0) {
        let w: Vec<f64> = u1.iter().zip(&u2).map(|(a, b)| a + b).collect();
        let p = Params { mu, nu, gamma, ..Params::default() };
        let m = face_mobilities(&u1, &u2, &w, &p, &g);
        for k in 0..m.combined.len() {
            prop_assert_eq!(m.combined[k], mu * m.species1[k] + nu * m.species2[k]);
            prop_assert!(m.species1[k] >= 0.0 && m.species2[k] >= 0.0);
        }
    }

    #[test]
    fn operator_is_symmetric_psd((g, x, y) in grid_and_fields(), seed in 0u64..1000) {
        let coupling: Vec<f64> = (0..g.faces().len()).map(|k| ((k as u64 * 2654435761 + seed) % 97) as f64 / 10.0).collect();
        let n = g.cell_count();
        let sys = LinearSystem::new(&g, vec![0.0; n], coupling, vec![0.0; n]);
        let mut ax = vec![0.0; n];
        let mut ay = vec![0.0; n];
        sys.apply(&x, &mut ax);
        sys.apply(&y, &mut ay);
        let xay: f64 = x.iter().zip(&ay).map(|(a, b)| a * b).sum();
        let yax: f64 = y.iter().zip(&ax).map(|(a, b)| a * b).sum();
        let xax: f64 = x.iter().zip(&ax).map(|(a, b)| a * b).sum();
        prop_assert!((xay - yax).abs() <= 1e-12 * (xay.abs() + 1.0));
        prop_assert!(xax >= -1e-12);
        // constants are in the kernel
        let mut a1 = vec![0.0; n];
        sys.apply(&vec![1.0; n], &mut a1);
        prop_assert!(a1.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn reactions_bounded_for_valid_logistic_models(
        alphas in prop::array::uniform4(0.0f64..5.0),
        u1 in 0.0f64..1.0,
        frac in 0.0f64..1.0,
        wp in 0.5f64..2.0,
    ) {
        let model = GrowthModel::logistic(wp, alphas).unwrap();
        let u1 = u1 * wp;
        let u2 = frac * (wp - u1);
        let w = u1 + u2;
        let (r1, r2) = reaction_rates(u1, u2, w, &model);
        prop_assert!(r1 >= 0.0 && r2 >= 0.0);
        let m0 = reaction_bound(&model, 10_000).unwrap().m0;
        // R1 + R2 = u1 F + u2 G <= w M0 <= w_p M0
        prop_assert!(r1 + r2 <= w * m0 * (1.0 + 1e-12) + 1e-15);
        prop_assert!(r1 + r2 <= wp * m0 * (1.0 + 1e-12) + 1e-15);
    }

    #[test]
    fn quadratic_form_agrees_with_sampling(a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0) {
        // sample A x^2 + B x y + C y^2 on the unit circle
        let min = (0..2000)
            .map(|k| {
                let t = k as f64 * std::f64::consts::TAU / 2000.0;
                a * t.cos().powi(2) + b * t.cos() * t.sin() + c * t.sin().powi(2)
            })
            .fold(f64::INFINITY, f64::min);
        let margin = (b * b - 4.0 * a * c).abs().min(a.abs()).min(c.abs());
        prop_assume!(margin > 1e-3);
        prop_assert_eq!(quadratic_form_nonneg(a, b, c), min >= 0.0);
    }

    #[test]
    fn field_csv_round_trips(values in prop::collection::vec(-1e6f64..1e6, 4)) {
        let g = Grid::new_2d(2, 2, 1.0, 1.0).unwrap();
        let f = Field::new(&g, values.clone()).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&g, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let parsed: Vec<f64> = text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
        prop_assert_eq!(parsed, values);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn doubling_max_picard_keeps_the_answer(
        amp in 0.05f64..0.6,
        bg in 0.01f64..0.3,
        split in 0.0f64..1.0,
        gamma in 1.2f64..3.0,
    ) {
        let g = Grid::new_1d(24, 1.0).unwrap();
        let w = Field::from_fn(&g, |c| bg + amp * (-((c[0] - 0.4) / 0.15).powi(2)).exp());
        let u1 = w.map(|v| v * split);
        let u2 = w.zip_map(&u1, |a, b| a - b);
        let s = State::from_species(u1, u2, 0.0);
        let model = GrowthModel::logistic(1.0, [1.0, 0.5, 0.5, 1.0]).unwrap();
        let p = Params { gamma, mu: 2.0, epsilon: 1e-3, ..Params::default() };
        let q = Params { max_picard: 2 * p.max_picard, ..p.clone() };
        let (a, ra) = picard_advance(&s, 1e-3, &p, &model, &g).unwrap();
        let (b, _) = picard_advance(&s, 1e-3, &q, &model, &g).unwrap();
        prop_assert!(ra.picard_iters <= p.max_picard);
        prop_assert!(a.w.max_abs_diff(&b.w) <= p.picard_tol);
        prop_assert!(a.u1.max_abs_diff(&b.u1) <= p.picard_tol);
    }

    #[test]
    fn zero_rate_step_conserves_mass(
        amp in 0.05f64..0.6,
        bg in 0.0f64..0.3,
        split in 0.0f64..1.0,
    ) {
        let g = Grid::new_2d(10, 8, 1.0, 0.8).unwrap();
        let w = Field::from_fn(&g, |c| bg + amp * (-((c[0] - 0.4).powi(2) + (c[1] - 0.5).powi(2)) / 0.05).exp());
        let u1 = w.map(|v| v * split);
        let u2 = w.zip_map(&u1, |a, b| a - b);
        let s = State::from_species(u1, u2, 0.0);
        let model = GrowthModel::inert(1.0).unwrap();
        let p = Params { solver: SolverKind::Cg, ..Params::default() };
        let (next, _) = picard_advance(&s, 1e-3, &p, &model, &g).unwrap();
        let before = g.integrate(&s.w);
        let after = g.integrate(&next.w);
        prop_assert!((before - after).abs() <= 1e-13 * before.max(1e-12));
        prop_assert!((g.integrate(&s.u1) - g.integrate(&next.u1)).abs() <= 1e-13 * before.max(1e-12));
    }
}

#[test]
fn laplacian_of_cosine_is_second_order() {
    let l = 2.0;
    let errs: Vec<f64> = [16usize, 32, 64, 128]
        .iter()
        .map(|&n| {
            let g = Grid::new_1d(n, l).unwrap();
            let k = std::f64::consts::PI / l;
            let f = Field::from_fn(&g, |c| (k * c[0]).cos());
            let lap = laplacian(&f, &g);
            f.iter().zip(lap.iter()).map(|(v, d)| (d + k * k * v).abs()).fold(0.0, f64::max)
        })
        .collect();
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!(order >= 1.9, "errors {errs:?}");
    }
}

#[test]
fn laplacian_kernel_is_constants_on_connected_grid() {
    let g = Grid::new_2d(5, 4, 1.0, 1.0).unwrap();
    assert!(laplacian(&Field::constant(&g, 3.2), &g).iter().all(|v| v.abs() < 1e-12));
    let f = Field::from_fn(&g, |c| c[0] * c[0]);
    assert!(laplacian(&f, &g).iter().any(|v| v.abs() > 1e-3));
}

#[test]
fn epsilon_distance_is_symmetric_and_vanishes_on_itself() {
    let setup = BarenblattSetup::default();
    let a = setup.scenario(32, 0.1).unwrap();
    let mut b = a.clone();
    b.params.epsilon = 0.01;
    let ta = a.run().unwrap();
    let tb = b.run().unwrap();
    let ab = h1_distance(&ta, &tb, 2.0, &a.grid).unwrap();
    let ba = h1_distance(&tb, &ta, 2.0, &a.grid).unwrap();
    assert!(ab > 0.0);
    assert_eq!(ab, ba);
    assert_eq!(h1_distance(&ta, &ta, 2.0, &a.grid).unwrap(), 0.0);
}

#[test]
fn picard_iterations_fall_with_dt() {
    let g = Grid::new_1d(64, 1.0).unwrap();
    let w = Field::from_fn(&g, |c| 0.05 + 0.6 * (-((c[0] - 0.5) / 0.1).powi(2)).exp());
    let s = State::from_species(w.map(|v| 0.4 * v), w.map(|v| 0.6 * v), 0.0);
    let model = GrowthModel::inert(1.0).unwrap();
    let p = Params::default();
    let iters: Vec<usize> = [4e-3, 1e-3, 2.5e-4]
        .iter()
        .map(|&dt| picard_advance(&s, dt, &p, &model, &g).unwrap().1.picard_iters)
        .collect();
    assert!(iters.windows(2).all(|w| w[1] < w[0]), "{iters:?}");
}

#[test]
fn l2_monitor_holds_per_step() {
    // d/dt 1/2 int w^2 <= M0 int w^2, checked between consecutive steps
    let g = Grid::new_1d(64, 1.0).unwrap();
    let w = Field::from_fn(&g, |c| 0.1 + 0.5 * (-((c[0] - 0.5) / 0.1).powi(2)).exp());
    let s = State::from_species(w.map(|v| 0.5 * v), w.map(|v| 0.5 * v), 0.0);
    let model = GrowthModel::logistic(1.0, [2.0, 1.0, 1.0, 2.0]).unwrap();
    let m0 = reaction_bound(&model, 10_000).unwrap().m0;
    let p = Params::default();
    let traj = run(&s, 0.3, DtPolicy::fixed(2e-3), &p, &model, &g).unwrap();
    for pair in traj.states.windows(2) {
        let a = record(&pair[0], &p, &g).l2_w;
        let b = record(&pair[1], &p, &g).l2_w;
        let dt = pair[1].t - pair[0].t;
        // backward Euler: (b - a) / dt <= 2 M0 b
        assert!((b - a) / dt <= 2.0 * m0 * b + 1e-8 * 2.0 * b, "{a} -> {b}");
    }
}
