use super::*;
use crate::numerics::Matrix;

fn shape() -> WindowShape {
    WindowShape { len: 3, dim: 2 }
}

fn small_config() -> ExpertConfig {
    ExpertConfig {
        rank: 2,
        tcpd_rank: 2,
        n_landmark: 5,
        hidden: 3,
        ridge: 1e-3,
        ..ExpertConfig::default()
    }
}

fn batch(rng: &mut SeededRng, b: usize) -> WindowBatch {
    let ld = shape().flat();
    WindowBatch {
        current: rng.normal_matrix(b, ld, 1.0),
        previous: rng.normal_matrix(b, ld, 1.0),
    }
}

fn init(kind: ExpertKind, rng: &mut SeededRng, data: &WindowBatch) -> (Expert, DomainParams) {
    let e = Expert::new(kind, shape(), small_config());
    let p = e.init_domain(rng, Some(&data.current)).unwrap();
    (e, p)
}

/// Central differences on `Expert::loss`, entry by entry.
fn fd_grad(e: &Expert, p: &DomainParams, b: &WindowBatch) -> Vec<Matrix> {
    let h = 1e-6;
    let mut out = Vec::new();
    for t in 0..p.tensors.len() {
        let mut g = Matrix::zeros(p.tensors[t].rows(), p.tensors[t].cols());
        for k in 0..p.tensors[t].len() {
            let mut up = p.clone();
            up.tensors[t].as_mut_slice()[k] += h;
            let mut down = p.clone();
            down.tensors[t].as_mut_slice()[k] -= h;
            g.as_mut_slice()[k] = (e.loss(&up, b).unwrap() - e.loss(&down, b).unwrap()) / (2.0 * h);
        }
        out.push(g);
    }
    out
}

#[test]
fn every_expert_loss_gradient_matches_finite_differences() {
    for kind in ExpertKind::ALL {
        let mut rng = SeededRng::new(11);
        let b = batch(&mut rng, 6);
        let (e, mut p) = init(kind, &mut rng, &b);
        if kind == ExpertKind::Sdl {
            // keep entries away from the kink of |·|
            for v in p.tensors[0].as_mut_slice() {
                if v.abs() < 0.02 {
                    *v += 0.05;
                }
            }
        }
        if kind == ExpertKind::Nmf {
            for v in p.tensors[0].as_mut_slice() {
                *v = v.abs() + 0.05;
            }
        }
        let (_, analytic) = e.loss_and_grad(&p, &b).unwrap();
        let numeric = fd_grad(&e, &p, &b);
        for (a, n) in analytic.iter().zip(&numeric) {
            let err = a.sub(n).unwrap().frobenius();
            let denom = a.frobenius().max(n.frobenius()).max(1e-8);
            assert!(err / denom < 1e-5, "{kind}: relative error {}", err / denom);
        }
    }
}

#[test]
fn features_have_raw_width() {
    for kind in ExpertKind::ALL {
        let mut rng = SeededRng::new(2);
        let b = batch(&mut rng, 7);
        let (e, p) = init(kind, &mut rng, &b);
        let f = e.raw_features(&p, &b).unwrap();
        assert_eq!(f.shape(), (7, e.raw_dim()), "{kind}");
    }
}

#[test]
fn init_satisfies_constraints() {
    for kind in ExpertKind::ALL {
        let mut rng = SeededRng::new(5);
        let b = batch(&mut rng, 8);
        let (e, mut p) = init(kind, &mut rng, &b);
        let before = p.clone();
        e.retract(&mut p).unwrap();
        assert!(p.distance_sq(&before).unwrap() < 1e-20, "{kind}");
    }
}

#[test]
fn pca_residual_vanishes_inside_the_subspace() {
    let mut rng = SeededRng::new(9);
    let e = Expert::new(ExpertKind::Pca, shape(), small_config());
    let p = e.init_domain(&mut rng, None).unwrap();
    let coeff = rng.normal_matrix(4, 2, 1.0);
    let x = coeff.matmul_t(&p.tensors[0]).unwrap();
    let b = WindowBatch {
        previous: x.clone(),
        current: x.clone(),
    };
    let res = e.residual_scores(&p, &b).unwrap().unwrap();
    assert!(res.iter().all(|r| r.abs() < 1e-20));
    let expected = -x.frobenius_sq() / 4.0;
    assert!((e.loss(&p, &b).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn nmf_exact_factorization_has_zero_loss() {
    let mut rng = SeededRng::new(4);
    let cfg = ExpertConfig {
        ridge: 0.0,
        ..small_config()
    };
    let e = Expert::new(ExpertKind::Nmf, shape(), cfg);
    let h = rng.uniform_matrix(2, 6);
    let w = rng.uniform_matrix(5, 2);
    let x = w.matmul(&h).unwrap();
    let p = DomainParams {
        tensors: vec![h],
        kernel: None,
    };
    let b = WindowBatch {
        previous: x.clone(),
        current: x,
    };
    assert!(e.loss(&p, &b).unwrap().abs() < 1e-12);
}

#[test]
fn sfa_feature_of_constant_series_is_zero() {
    let mut rng = SeededRng::new(1);
    let e = Expert::new(ExpertKind::Sfa, shape(), small_config());
    let p = e.init_domain(&mut rng, None).unwrap();
    let x = Matrix::filled(4, 6, 2.5);
    let b = WindowBatch {
        previous: x.clone(),
        current: x,
    };
    let f = e.raw_features(&p, &b).unwrap();
    assert_eq!(f.max_abs(), 0.0);
    assert_eq!(e.loss(&p, &b).unwrap(), 0.0);
}

#[test]
fn tangent_step_then_retraction_stays_feasible() {
    let mut rng = SeededRng::new(8);
    let b = batch(&mut rng, 6);
    for kind in [ExpertKind::Pca, ExpertKind::Kpca, ExpertKind::Tcpd] {
        let (e, p) = init(kind, &mut rng, &b);
        let (_, g) = e.loss_and_grad(&p, &b).unwrap();
        let g = e.project_tangent(&p, g).unwrap();
        let mut q = p.clone();
        for (t, d) in q.tensors.iter_mut().zip(&g) {
            t.axpy(-0.1, d).unwrap();
        }
        e.retract(&mut q).unwrap();
        let w = &q.tensors[0];
        if kind == ExpertKind::Tcpd {
            for j in 0..w.cols() {
                let n: f64 = w.col(j).iter().map(|x| x * x).sum();
                assert!((n - 1.0).abs() < 1e-12);
            }
        } else {
            let gram = w.t_matmul(w).unwrap();
            assert!(gram.sub(&Matrix::identity(w.cols())).unwrap().max_abs() < 1e-12);
        }
    }
}

#[test]
fn kpca_requires_landmarks() {
    let mut rng = SeededRng::new(0);
    let e = Expert::new(ExpertKind::Kpca, shape(), small_config());
    assert!(matches!(
        e.init_domain(&mut rng, None),
        Err(CicadaError::BadConfig(_))
    ));
}

#[test]
fn kernel_rows_are_one_at_landmarks() {
    let mut rng = SeededRng::new(6);
    let x = rng.normal_matrix(10, 4, 1.0);
    let k = KernelBasis::sample(&x, 4, &mut rng).unwrap();
    let rows = k.rows(&k.landmarks).unwrap();
    for i in 0..4 {
        assert!((rows[(i, i)] - 1.0).abs() < 1e-12);
    }
}

#[test]
fn kind_names_round_trip() {
    for kind in ExpertKind::ALL {
        assert_eq!(kind.name().parse::<ExpertKind>().unwrap(), kind);
    }
    assert!("foo".parse::<ExpertKind>().is_err());
}

#[test]
fn tcpd_dictionary_matches_rank_one_sum() {
    let mut rng = SeededRng::new(13);
    let (l, d, r) = (4, 3, 2);
    let a = rng.normal_matrix(l, r, 1.0);
    let b = rng.normal_matrix(d, r, 1.0);
    let z = [0.7, -1.3];
    let mut g = crate::numerics::Graph::new();
    let av = g.constant(a.clone());
    let bv = g.constant(b.clone());
    let w = g.khatri_rao(av, bv).unwrap();
    let vec_x = g.value(w).matmul(&Matrix::col_vector(&z)).unwrap();
    // Σ_r z_r a_r ∘ b_r laid out time-major
    for t in 0..l {
        for v in 0..d {
            let direct: f64 = (0..r).map(|q| z[q] * a[(t, q)] * b[(v, q)]).sum();
            assert!((vec_x[(t * d + v, 0)] - direct).abs() < 1e-12);
        }
    }
}

#[test]
fn init_is_deterministic_and_feasible() {
    let cfg = ExpertConfig {
        rank: 2,
        tcpd_rank: 3,
        ..ExpertConfig::default()
    };
    let e = Expert::new(ExpertKind::Pca, WindowShape { len: 2, dim: 2 }, cfg.clone());
    let w = &e.init_domain(&mut SeededRng::new(1), None).unwrap().tensors[0];
    assert_eq!(w.shape(), (4, 2));
    assert!(w.t_matmul(w).unwrap().sub(&Matrix::identity(2)).unwrap().max_abs() < 1e-10);
    let e = Expert::new(ExpertKind::Tcpd, WindowShape { len: 2, dim: 2 }, cfg);
    let p1 = e.init_domain(&mut SeededRng::new(1), None).unwrap();
    let p2 = e.init_domain(&mut SeededRng::new(1), None).unwrap();
    assert_eq!(p1, p2);
    for t in &p1.tensors {
        for j in 0..3 {
            let n: f64 = t.col(j).iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn rank_larger_than_window_is_rejected() {
    let e = Expert::new(
        ExpertKind::Pca,
        WindowShape { len: 1, dim: 2 },
        ExpertConfig {
            rank: 3,
            ..ExpertConfig::default()
        },
    );
    assert!(matches!(
        e.init_domain(&mut SeededRng::new(0), None),
        Err(CicadaError::BadConfig(_))
    ));
}

#[test]
fn pca_feature_of_a_basis_vector_is_a_unit_coordinate() {
    let mut rng = SeededRng::new(3);
    let e = Expert::new(ExpertKind::Pca, shape(), small_config());
    let p = e.init_domain(&mut rng, None).unwrap();
    let w = &p.tensors[0];
    let x = Matrix::row_vector(&w.col(0));
    let b = WindowBatch {
        previous: x.clone(),
        current: x,
    };
    let f = e.raw_features(&p, &b).unwrap();
    assert!((f[(0, 0)] - 1.0).abs() < 1e-12 && f[(0, 1)].abs() < 1e-12);
}

#[test]
fn sfa_scores_are_mahalanobis_distances() {
    let mut rng = SeededRng::new(2);
    let expert = Expert::new(ExpertKind::Sfa, shape(), small_config());
    let params = expert.init_domain(&mut rng, None).unwrap();
    let mut projection = crate::nn::Linear::init(2, 2, &mut rng);
    projection.weight = Matrix::identity(2);
    let state = ExpertState {
        expert,
        domains: MetaDomainSet::new(params, 1e-3),
        projection,
        stats: ExpertStats {
            gaussians: vec![Some(FeatureGaussian {
                mean: vec![1.0, 1.0],
                precision: Matrix::identity(2),
            })],
            pooled: None,
            normalizer: None,
        },
    };
    let s = state
        .feature_scores(&Matrix::from_rows(&[vec![4.0, 5.0], vec![1.0, 1.0]]), 0)
        .unwrap();
    assert_eq!(s, vec![25.0, 0.0]);
    let empty = ExpertState {
        stats: ExpertStats::default(),
        ..state
    };
    assert!(matches!(
        empty.feature_scores(&Matrix::zeros(1, 2), 0),
        Err(CicadaError::MissingStats { .. })
    ));
}

#[test]
fn sfa_projected_feature_of_constant_series_is_the_bias() {
    let mut rng = SeededRng::new(6);
    let expert = Expert::new(ExpertKind::Sfa, shape(), small_config());
    let params = expert.init_domain(&mut rng, None).unwrap();
    let mut projection = crate::nn::Linear::init(2, 3, &mut rng);
    projection.bias = Matrix::row_vector(&[0.5, -1.0, 2.0]);
    let state = ExpertState {
        expert,
        domains: MetaDomainSet::new(params.clone(), 1e-3),
        projection,
        stats: ExpertStats::default(),
    };
    let x = Matrix::filled(2, 6, 3.0);
    let b = WindowBatch {
        previous: x.clone(),
        current: x,
    };
    let f = state.features(&params, &b).unwrap();
    assert_eq!(f.row(0), &[0.5, -1.0, 2.0]);
}

#[test]
fn residual_scores_are_nonnegative() {
    for kind in ExpertKind::ALL {
        if !kind.scores_by_residual() {
            continue;
        }
        let mut rng = SeededRng::new(30);
        let b = batch(&mut rng, 5);
        let (e, p) = init(kind, &mut rng, &b);
        let s = e.residual_scores(&p, &b).unwrap().unwrap();
        assert!(s.iter().all(|&v| v >= 0.0 && v.is_finite()), "{kind}");
    }
}
