mod common;

use clusteriv_core::cluster::{center_by_cluster, cluster_means};
use clusteriv_core::diagnostics::{
    design_diagnostics, efficiency_cutoff, efficiency_ratio, equal_size_design, fe_weights, ClusterParams,
    EfficiencyModel,
};
use clusteriv_core::estimators::{fit, fit_2sfe, fit_2sfe_x};
use clusteriv_core::hetero::{cluster_bootstrap, hettest};
use clusteriv_core::iv::{crse_from_parts, fwl_scalar_fit, tsls_fit};
use clusteriv_core::lstsq::{ols_fit, Qr};
use clusteriv_core::sim::{gen_heterogeneous_replicate, ComplianceType, HeteroSimConfig};
use clusteriv_core::{ClusterIndex, Dataset, Error, FitOptions, Matrix, Strategy};
use common::*;
use proptest::prelude::*;

fn config() -> ProptestConfig {
    ProptestConfig { cases: 256, max_global_rejects: 4096, ..ProptestConfig::default() }
}

fn ones(n: usize) -> Vec<f64> {
    vec![1.0; n]
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn fixed_effects_by_centering_equal_dummy_expansion(seed in any::<u64>()) {
        let inst = random_instance(seed, 0, 2);
        let data = inst.dataset();
        let strategy = if inst.x.is_empty() { Strategy::Tsfe } else { Strategy::TsfeX };
        let fe = fit(&data, strategy, &FitOptions::default());
        prop_assume!(fe.is_ok());
        let fe = fe.unwrap();

        let groups = inst.groups();
        let dum = dummies(&groups, inst.sizes.len());
        let mut vcols: Vec<&[f64]> = vec![&inst.d];
        let mut wcols: Vec<&[f64]> = vec![&inst.z];
        for c in inst.x.iter().chain(&dum) {
            vcols.push(c);
            wcols.push(c);
        }
        let dense = dense_tsls(&inst.y, &from_cols(&vcols), &from_cols(&wcols), &groups);
        prop_assert!(close(fe.tau_hat, dense.coefficients[0], 1e-8));
        prop_assert!(close(fe.se, dense.cov[0][0].sqrt(), 1e-8));
        prop_assert!(all_close(&fe.residuals, &dense.residuals, 1e-8));
        for j in 0..inst.x.len() {
            prop_assert!(close(fe.coefficients[1 + j].value, dense.coefficients[1 + j], 1e-8));
        }

        // The library's own matrix route on the dummy expansion agrees too.
        let lib = tsls_fit(&inst.y, &to_matrix(&vcols), &to_matrix(&wcols), &inst.index()).unwrap();
        prop_assert!(close(lib.coefficients[0], fe.tau_hat, 1e-8));
        prop_assert!(close(lib.crse()[0], fe.se, 1e-8));
        prop_assert!(all_close(&lib.residuals, &fe.residuals, 1e-8));
    }

    #[test]
    fn canonical_fits_match_textbook_formulas(seed in any::<u64>()) {
        let inst = random_instance(seed, 1, 2);
        let data = inst.dataset();
        let strategy = if inst.x.is_empty() { Strategy::Tsls } else { Strategy::TslsX };
        let ls = fit(&data, strategy, &FitOptions::default());
        prop_assume!(ls.is_ok());
        let ls = ls.unwrap();
        let one = ones(inst.n());
        let mut vcols: Vec<&[f64]> = vec![&one, &inst.d];
        let mut wcols: Vec<&[f64]> = vec![&one, &inst.z];
        for c in &inst.x {
            vcols.push(c);
            wcols.push(c);
        }
        let dense = dense_tsls(&inst.y, &from_cols(&vcols), &from_cols(&wcols), &inst.groups());
        prop_assert!(close(ls.tau_hat, dense.coefficients[1], 1e-8));
        prop_assert!(close(ls.coefficient("(Intercept)").unwrap(), dense.coefficients[0], 1e-8));
        prop_assert!(close(ls.se, dense.cov[1][1].sqrt(), 1e-8));
        prop_assert!(all_close(&ls.residuals, &dense.residuals, 1e-8));
    }

    #[test]
    fn sandwich_matrix_and_score_forms_agree(seed in any::<u64>()) {
        let inst = random_instance(seed, 2, 2);
        let data = inst.dataset();
        let idx = inst.index();
        let one = ones(inst.n());
        let mut vcols: Vec<&[f64]> = vec![&one, &inst.d];
        let mut wcols: Vec<&[f64]> = vec![&one, &inst.z];
        for c in &inst.x {
            vcols.push(c);
            wcols.push(c);
        }
        let (v, w) = (to_matrix(&vcols), to_matrix(&wcols));
        let lib = tsls_fit(&inst.y, &v, &w, &idx);
        prop_assume!(lib.is_ok());
        let lib = lib.unwrap();
        let strategy = if inst.x.is_empty() { Strategy::Tsls } else { Strategy::TslsX };
        let scalar = fit(&data, strategy, &FitOptions::default()).unwrap();

        // matrix form vs per-cluster score form
        prop_assert!(close(lib.crse_cov[(1, 1)], scalar.se * scalar.se, 1e-10));
        // matrix form vs dense Ω̂
        let dense = dense_tsls(&inst.y, &from_cols(&vcols), &from_cols(&wcols), &inst.groups());
        for a in 0..v.cols() {
            for b in 0..v.cols() {
                let scale = (dense.cov[a][a] * dense.cov[b][b]).sqrt();
                prop_assert!((lib.crse_cov[(a, b)] - dense.cov[a][b]).abs() <= 1e-10 * scale.max(1e-300));
            }
        }
        // recomputation from residuals
        let again = crse_from_parts(&v, &w, &lib.residuals, &idx).unwrap();
        prop_assert_eq!(again, lib.crse_cov.clone());
    }

    #[test]
    fn score_identities(seed in any::<u64>()) {
        let inst = random_instance(seed, 3, 0);
        let data = inst.dataset();
        let idx = inst.index();
        let n = inst.n() as f64;
        let opts = FitOptions::default();
        let (ls, fe) = match (fit(&data, Strategy::Tsls, &opts), fit(&data, Strategy::Tsfe, &opts)) {
            (Ok(a), Ok(b)) => (a, b),
            _ => return Err(TestCaseError::reject("not identified")),
        };
        let zbar = inst.z.iter().sum::<f64>() / n;
        let zc: Vec<f64> = inst.z.iter().map(|v| v - zbar).collect();
        let rhs: f64 = idx.cross_sums(&zc, &ls.residuals).unwrap().iter().map(|s| s * s).sum();
        prop_assert!(close(ls.se.powi(2) * (n * ls.s_zd).powi(2), rhs, 1e-10));
        let zw = center_by_cluster(&inst.z, &idx).unwrap();
        let rhs: f64 = idx.cross_sums(&zw, &fe.residuals).unwrap().iter().map(|s| s * s).sum();
        prop_assert!(close(fe.se.powi(2) * (n * fe.s_zd).powi(2), rhs, 1e-10));
    }

    #[test]
    fn ols_is_two_stage_with_itself_as_instrument(seed in any::<u64>()) {
        let inst = random_instance(seed, 4, 2);
        let idx = inst.index();
        let one = ones(inst.n());
        let mut cols: Vec<&[f64]> = vec![&one, &inst.d];
        cols.extend(inst.x.iter().map(Vec::as_slice));
        let x = to_matrix(&cols);
        let ols = ols_fit(&x, &inst.y).unwrap();
        prop_assume!(ols.rank_ok);
        let iv = tsls_fit(&inst.y, &x, &x, &idx).unwrap();
        prop_assert!(all_close(&iv.coefficients, &ols.coefficients, 1e-10));
        prop_assert!(all_close(&iv.residuals, &ols.residuals, 1e-10));
        // OLS cluster-robust sandwich (XᵀX)⁻¹ Xᵀ Ω̂ X (XᵀX)⁻¹ from the oracle
        let dense = dense_tsls(&inst.y, &from_cols(&cols), &from_cols(&cols), &inst.groups());
        for j in 0..x.cols() {
            prop_assert!(close(iv.crse_cov[(j, j)], dense.cov[j][j], 1e-10));
        }
        let strategy = if inst.x.is_empty() { Strategy::Ols } else { Strategy::OlsX };
        let lib_ols = fit(&inst.dataset(), strategy, &FitOptions::default()).unwrap();
        prop_assert!(close(lib_ols.tau_hat, ols.coefficients[1], 1e-10));
        prop_assert!(close(lib_ols.se * lib_ols.se, iv.crse_cov[(1, 1)], 1e-10));
    }

    #[test]
    fn cluster_level_covariates_reduce_to_plain_fixed_effects(seed in any::<u64>(), k in 1usize..=3) {
        let mut inst = random_instance(seed, 5, 0);
        let mut rng_vals = random_instance(seed, 6, 0).y;
        rng_vals.resize(inst.sizes.len() * k, 0.25);
        let groups = inst.groups();
        inst.x = (0..k)
            .map(|j| groups.iter().map(|&g| rng_vals[j * inst.sizes.len() + g] + j as f64).collect())
            .collect();
        let data = inst.dataset();
        let plain = fit_2sfe(&data);
        prop_assume!(plain.is_ok());
        let plain = plain.unwrap();
        match fit_2sfe_x(&data) {
            Err(Error::ClusterConstantCovariate { columns }) => prop_assert_eq!(columns.len(), k),
            other => prop_assert!(false, "expected rejection, got {:?}", other.map(|f| f.tau_hat)),
        }
        let reduced = fit_2sfe_x(&data.select_covariates(&[]).unwrap()).unwrap();
        prop_assert_eq!(reduced.tau_hat, plain.tau_hat);
        prop_assert_eq!(reduced.se, plain.se);
        prop_assert_eq!(reduced.residuals, plain.residuals);
    }

    #[test]
    fn se_diff_forms_and_invariances(seed in any::<u64>(), shift in -50.0f64..50.0, scale in 0.01f64..100.0) {
        let inst = random_instance(seed, 7, 0);
        let data = inst.dataset();
        let opts = FitOptions::default();
        let h = hettest(&data, &opts);
        prop_assume!(h.is_ok());
        let h = h.unwrap();
        prop_assert!(close(h.se_diff, h.se_diff_from_cov, 1e-10));
        prop_assert!(h.cov2[0][1] == h.cov2[1][0]);
        prop_assert!(h.correlation().abs() <= 1.0 + 1e-12);

        let shifted: Vec<f64> = inst.y.iter().map(|v| v + shift).collect();
        let hs = hettest(&Dataset::new(shifted, inst.d.clone(), inst.z.clone(), inst.index()).unwrap(), &opts).unwrap();
        prop_assert!(close(hs.se_diff, h.se_diff, 1e-8));
        prop_assert!(close(hs.t_stat, h.t_stat, 1e-7));

        let scaled: Vec<f64> = inst.y.iter().map(|v| v * scale).collect();
        let hc = hettest(&Dataset::new(scaled, inst.d.clone(), inst.z.clone(), inst.index()).unwrap(), &opts).unwrap();
        prop_assert!(close(hc.se_diff, scale * h.se_diff, 1e-9));
        prop_assert!(close(hc.t_stat, h.t_stat, 1e-9));
    }

    #[test]
    fn anova_and_idempotence(sizes in prop::collection::vec(1usize..=8, 1..=12), seed in any::<u64>()) {
        let idx = ClusterIndex::from_sizes(&sizes).unwrap();
        let n = idx.n_units();
        let v = random_instance(seed, 8, 0).y.into_iter().cycle().take(n).collect::<Vec<_>>();
        let nf = n as f64;
        let vbar = v.iter().sum::<f64>() / nf;
        let total: f64 = v.iter().map(|x| (x - vbar).powi(2)).sum();
        let centered = center_by_cluster(&v, &idx).unwrap();
        let within: f64 = centered.iter().map(|x| x * x).sum();
        let between: f64 = cluster_means(&v, &idx)
            .unwrap()
            .iter()
            .enumerate()
            .map(|(g, m)| idx.size(g) as f64 * (m - vbar).powi(2))
            .sum();
        prop_assert!((total - within - between).abs() <= 1e-10 * total.max(1e-300));
        let twice = center_by_cluster(&centered, &idx).unwrap();
        for (a, b) in twice.iter().zip(&centered) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn design_moments_are_consistent(seed in any::<u64>()) {
        let inst = random_instance(seed, 9, 0);
        let d = design_diagnostics(&inst.dataset()).unwrap();
        let n = inst.n() as f64;
        let sum_phi: f64 = d.phi_hat.iter().zip(&inst.sizes).map(|(p, &s)| s as f64 * p).sum();
        prop_assert!((d.kappa_hat - (1.0 - sum_phi / n)).abs() < 1e-12);
        let c: f64 = d.phi_hat.iter().zip(&inst.sizes).map(|(p, &s)| (s * s) as f64 * p).sum::<f64>() / n;
        prop_assert!((d.c_hat - c).abs() <= 1e-12 * (1.0 + c));
        prop_assert!((0.0..=1.0).contains(&d.kappa_hat));
    }

    #[test]
    fn partialled_cross_moment_forms(seed in any::<u64>()) {
        let inst = random_instance(seed, 10, 2);
        let n = inst.n();
        let nf = n as f64;
        let one = ones(n);
        let mut cols: Vec<&[f64]> = vec![&one];
        cols.extend(inst.x.iter().map(Vec::as_slice));
        let w = to_matrix(&cols);
        let qr = Qr::new(&w).unwrap();
        prop_assume!(qr.is_full_rank());
        let zt = qr.residualize(&inst.z).unwrap();
        let gamma = qr.solve(&inst.z).unwrap();
        let lhs: f64 = zt.iter().zip(&inst.d).map(|(a, b)| a * b).sum::<f64>() / nf;
        let wd = w.tmatvec(&inst.d).unwrap();
        let rhs = inst.z.iter().zip(&inst.d).map(|(a, b)| a * b).sum::<f64>() / nf
            - gamma.iter().zip(&wd).map(|(g, s)| g * s / nf).sum::<f64>();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn scale_equivariance(seed in any::<u64>(), c in prop_oneof![-20.0f64..-0.05, 0.05f64..20.0]) {
        let inst = random_instance(seed, 11, 1);
        let idx = inst.index();
        let n = inst.n();
        let one = ones(n);
        let mut cols: Vec<&[f64]> = vec![&one];
        cols.extend(inst.x.iter().map(Vec::as_slice));
        let w = to_matrix(&cols);
        let base = fwl_scalar_fit(&inst.y, &inst.d, &inst.z, &w, &idx);
        prop_assume!(base.is_ok());
        let base = base.unwrap();
        let yc: Vec<f64> = inst.y.iter().map(|v| v * c).collect();
        let fy = fwl_scalar_fit(&yc, &inst.d, &inst.z, &w, &idx).unwrap();
        prop_assert!(close(fy.tau_hat, c * base.tau_hat, 1e-10));
        prop_assert!(close(fy.se, c.abs() * base.se, 1e-10));
        let zc: Vec<f64> = inst.z.iter().map(|v| v * c).collect();
        let fz = fwl_scalar_fit(&inst.y, &inst.d, &zc, &w, &idx).unwrap();
        prop_assert!(close(fz.tau_hat, base.tau_hat, 1e-10));
        prop_assert!(close(fz.se, base.se, 1e-10));
    }

    #[test]
    fn permuting_clusters_and_units_changes_nothing(seed in any::<u64>(), rot in 0usize..10) {
        let inst = random_instance(seed, 12, 2);
        let data = inst.dataset();
        let g = inst.sizes.len();
        // new order: clusters rotated, units reversed inside each cluster
        let groups = inst.groups();
        let mut order = Vec::with_capacity(inst.n());
        for k in 0..g {
            let cl = (k + rot) % g;
            let mut members: Vec<usize> = (0..inst.n()).filter(|&i| groups[i] == cl).collect();
            members.reverse();
            order.extend(members);
        }
        let labels: Vec<String> = order.iter().map(|&i| format!("c{}", groups[i])).collect();
        let pick = |v: &[f64]| order.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        let mut permuted = Dataset::new(pick(&inst.y), pick(&inst.d), pick(&inst.z), ClusterIndex::from_labels(&labels).unwrap()).unwrap();
        if !inst.x.is_empty() {
            let cols: Vec<Vec<f64>> = inst.x.iter().map(|c| pick(c)).collect();
            let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
            permuted = permuted.with_covariates(to_matrix(&refs), data.x_names().to_vec()).unwrap();
        }
        for s in Strategy::ALL {
            let (a, b) = (fit(&data, s, &FitOptions::default()), fit(&permuted, s, &FitOptions::default()));
            match (a, b) {
                (Ok(a), Ok(b)) => {
                    prop_assert!(close(a.tau_hat, b.tau_hat, 1e-10));
                    prop_assert!(close(a.se, b.se, 1e-9));
                    prop_assert!(all_close(&pick(&a.residuals), &b.residuals, 1e-9));
                    let mut sa = a.per_cluster_scores.clone();
                    sa.rotate_left(rot % g);
                    prop_assert!(all_close(&sa, &b.per_cluster_scores, 1e-8));
                }
                (Err(a), Err(b)) => prop_assert_eq!(core::mem::discriminant(&a), core::mem::discriminant(&b)),
                (a, b) => prop_assert!(false, "{s}: {:?} vs {:?}", a.map(|f| f.tau_hat), b.map(|f| f.tau_hat)),
            }
        }
    }

    #[test]
    fn equal_instrument_shares_make_both_estimators_coincide(
        half_sizes in prop::collection::vec(1usize..=4, 2..=8),
        seed in any::<u64>(),
    ) {
        let sizes: Vec<usize> = half_sizes.iter().map(|h| 2 * h).collect();
        let n: usize = sizes.iter().sum();
        let z: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let noise = random_instance(seed, 13, 0);
        let d: Vec<f64> = z.iter().enumerate().map(|(i, &zi)| if i % 5 == 3 { 1.0 - zi } else { zi }).collect();
        let y: Vec<f64> = noise.y.iter().cycle().take(n).zip(&d).map(|(e, di)| e + 2.0 * di).collect();
        let data = Dataset::new(y, d, z, ClusterIndex::from_sizes(&sizes).unwrap()).unwrap();
        let opts = FitOptions::default();
        let (ls, fe) = match (fit(&data, Strategy::Tsls, &opts), fit(&data, Strategy::Tsfe, &opts)) {
            (Ok(a), Ok(b)) => (a, b),
            _ => return Err(TestCaseError::reject("not identified")),
        };
        prop_assert!((ls.tau_hat - fe.tau_hat).abs() <= 1e-12 * (1.0 + ls.tau_hat.abs()));
    }

    #[test]
    fn efficiency_ratio_and_cutoff_agree(
        sigma_alpha2 in 0.0f64..5.0,
        sigma_eps2 in 0.1f64..5.0,
        kappa in 0.05f64..1.0,
        c in 0.0f64..30.0,
    ) {
        let m = EfficiencyModel { sigma_alpha2, sigma_eps2, kappa, c, pi_c: 0.6, sigma_z2: 0.2 };
        let r = efficiency_ratio(&m).unwrap().ratio;
        let cut = efficiency_cutoff(kappa, c).unwrap().cutoff;
        let rho = sigma_alpha2 / sigma_eps2;
        prop_assume!((rho - cut).abs() > 1e-9 * (1.0 + cut.min(1e9)));
        prop_assert_eq!(r > 1.0, rho > cut);
    }

    #[test]
    fn equal_size_closed_form(n_bar in 1.0f64..50.0, phi_bar in 0.0f64..0.99, rho in 0.0f64..5.0) {
        let (kappa, c) = equal_size_design(n_bar, phi_bar);
        let m = EfficiencyModel { sigma_alpha2: rho, sigma_eps2: 1.0, kappa, c, pi_c: 1.0, sigma_z2: 0.25 };
        let r = efficiency_ratio(&m).unwrap().ratio;
        let closed = (1.0 - phi_bar) * (1.0 + n_bar * phi_bar * rho);
        prop_assert_eq!(r, closed);
    }

    #[test]
    fn late_weights_are_a_scale_free_simplex(
        params in prop::collection::vec((1usize..30, 0.0f64..1.0, 0.01f64..0.25, 0.01f64..1.0, -3.0f64..3.0), 1..20),
        scale in 0.01f64..3.0,
    ) {
        let clusters: Vec<ClusterParams> = params
            .iter()
            .map(|&(n, phi, s, p, t)| ClusterParams { n, phi: phi.min(0.95), sigma_z2: s, pi_c: p, tau_c: t })
            .collect();
        let w = fe_weights(&clusters, false).unwrap();
        prop_assert!(w.kappa_2sfe.iter().all(|&k| k >= 0.0));
        prop_assert!((w.kappa_2sfe.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let rescaled: Vec<ClusterParams> = clusters.iter().map(|p| ClusterParams { sigma_z2: p.sigma_z2 * scale, ..*p }).collect();
        let w2 = fe_weights(&rescaled, false).unwrap();
        prop_assert!(all_close(&w.kappa_2sfe, &w2.kappa_2sfe, 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, ..ProptestConfig::default() })]

    #[test]
    fn simulated_treatment_follows_the_compliance_rule(seed in any::<u64>(), delta in -2.0f64..2.0) {
        let cfg = HeteroSimConfig { n_clusters: 10, cluster_size: 5, ..HeteroSimConfig::with_delta(delta) };
        let (data, truth) = gen_heterogeneous_replicate(&cfg, seed, 0).unwrap();
        for i in 0..data.n_units() {
            prop_assert!(data.z()[i] == 0.0 || data.z()[i] == 1.0);
            let expect = if truth.types[i] == ComplianceType::Complier { data.z()[i] } else { 0.0 };
            prop_assert_eq!(data.d()[i], expect);
        }
    }
}

#[test]
fn toy_example_tau_is_two_and_a_half() {
    let idx = ClusterIndex::from_sizes(&[2, 2]).unwrap();
    let data = Dataset::new(vec![1.0, 3.0, 2.0, 5.0], vec![0.0, 1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0, 1.0], idx).unwrap();
    for s in [Strategy::Tsls, Strategy::Tsfe] {
        assert!((fit(&data, s, &FitOptions::default()).unwrap().tau_hat - 2.5).abs() < 1e-13);
    }
}

#[test]
fn bootstrap_is_a_function_of_data_reps_and_seed() {
    let data = random_instance(99, 0, 0).dataset();
    let a = cluster_bootstrap(&data, 100, 5, &FitOptions::default());
    let b = cluster_bootstrap(&data, 100, 5, &FitOptions::default());
    match (a, b) {
        (Ok(a), Ok(b)) => {
            assert_eq!(a.diff_reps, b.diff_reps);
            assert_eq!(a.se_diff, b.se_diff);
        }
        (Err(a), Err(b)) => assert_eq!(a, b),
        _ => panic!("non-deterministic bootstrap"),
    }
    assert!(cluster_bootstrap(&data, 99, 5, &FitOptions::default()).is_err());
}

#[test]
fn matrix_shape_is_checked() {
    assert!(Matrix::from_columns(3, &[&[1.0, 2.0]]).is_err());
}
