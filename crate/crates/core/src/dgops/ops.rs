use crate::error::{Error, Result};
use crate::tensor::deriv;

use super::space::{BoundaryRule, DgSpace, FaceLink, FacePolicy, Field, InterfaceRule, VecField};

/// Interface penalty `sigma = kappa N (N+1) / 2 |J_f| <1/J>`.
pub fn penalty_sigma(kappa_sigma: f64, order: usize, face_jacobian: f64, avg_inv_jacobian: f64) -> Result<f64> {
    if !(kappa_sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("penalty coefficient {kappa_sigma} must be non-negative")));
    }
    let n = order as f64;
    Ok(kappa_sigma * n * (n + 1.0) / 2.0 * face_jacobian * avg_inv_jacobian)
}

/// Penalty coefficient multiplying `[[P]]` at one face point, or zero for
/// a plain average.
pub(crate) fn interface_penalty(space: &DgSpace, rule: InterfaceRule, fp: usize, p: usize, nbr: usize) -> Result<f64> {
    Ok(match rule {
        InterfaceRule::Average => 0.0,
        InterfaceRule::ConstantPenalty { sigma } => {
            if !(sigma >= 0.0) {
                return Err(Error::InvalidArgument(format!("penalty {sigma} must be non-negative")));
            }
            sigma
        }
        InterfaceRule::Penalty { kappa_sigma, factor } => {
            let jac = space.metrics().jacobian();
            let avg_inv = 0.5 * (1.0 / jac[p] + 1.0 / jac[nbr]);
            factor * penalty_sigma(kappa_sigma, space.order(), space.metrics().face_jacobian()[fp], avg_inv)?
        }
    })
}

/// Visits every face point of element `e` as `(face, fp, own_node)`.
#[inline]
pub(crate) fn for_face_points(space: &DgSpace, e: usize, mut f: impl FnMut(usize, usize, usize)) {
    let n1 = space.n1();
    for face in 0..6 {
        for b in 0..n1 {
            for a in 0..n1 {
                let fp = space.metrics().face_index(e, face, a, b);
                f(face, fp, space.face_node(e, face, a, b));
            }
        }
    }
}

/// DG gradient in strong form with lifted BR1 corrections. Interior faces
/// use the average trace; boundaries use the interior trace.
pub fn dg_gradient(space: &DgSpace, u: &Field, policy: &FacePolicy) -> Result<VecField> {
    space.check_field(u)?;
    policy.resolve(space)?;
    let np = space.nodes_per_element();
    let basis = space.basis();
    let jac = space.metrics().jacobian();
    let ja = space.metrics().contravariant();
    let fjac = space.metrics().face_jacobian();
    let normal = space.metrics().face_normal();
    let lift = space.lift_factor();
    let mut out = VecField::zeros(space.num_nodes());
    let mut du = [vec![0.0; np], vec![0.0; np], vec![0.0; np]];

    for e in 0..space.num_elements() {
        let off = e * np;
        let ue = &u.values[off..off + np];
        for i in 0..3 {
            deriv(basis, ue, i, &mut du[i]);
        }
        for p in 0..np {
            let g = off + p;
            let inv_j = 1.0 / jac[g];
            for n in 0..3 {
                out.comps[n][g] = inv_j * (ja[g][0][n] * du[0][p] + ja[g][1][n] * du[1][p] + ja[g][2][n] * du[2][p]);
            }
        }
        for_face_points(space, e, |_, fp, g| {
            if let FaceLink::Interior { nbr_node, .. } = space.link(fp) {
                let c = lift * fjac[fp] / jac[g] * 0.5 * (u.values[nbr_node] - u.values[g]);
                for n in 0..3 {
                    out.comps[n][g] += c * normal[fp][n];
                }
            }
        });
    }
    Ok(out)
}

/// DG divergence in strong form with lifted numerical normal fluxes.
///
/// With a penalized interface rule the normal flux at a face point is
/// `{{V}}.n - sigma (P - P_nbr)`, where `P` is `penalty_of`.
pub fn dg_divergence(space: &DgSpace, v: &VecField, policy: &FacePolicy, penalty_of: Option<&Field>) -> Result<Field> {
    let rules = policy.resolve(space)?;
    if v.len() != space.num_nodes() {
        return Err(Error::Configuration("vector field does not match the space".into()));
    }
    let penalized = !matches!(policy.interface, InterfaceRule::Average);
    let pen_field = match (penalized, penalty_of) {
        (true, None) => {
            return Err(Error::Configuration("penalized divergence needs the penalized scalar".into()))
        }
        (true, Some(f)) => {
            space.check_field(f)?;
            Some(f)
        }
        (false, _) => None,
    };
    let np = space.nodes_per_element();
    let basis = space.basis();
    let jac = space.metrics().jacobian();
    let ja = space.metrics().contravariant();
    let fjac = space.metrics().face_jacobian();
    let normal = space.metrics().face_normal();
    let lift = space.lift_factor();
    let mut out = vec![0.0; space.num_nodes()];
    let mut flux = vec![0.0; np];
    let mut tmp = vec![0.0; np];
    let mut err = None;

    for e in 0..space.num_elements() {
        let off = e * np;
        let acc = &mut out[off..off + np];
        for i in 0..3 {
            for p in 0..np {
                let g = off + p;
                flux[p] = ja[g][i][0] * v.comps[0][g] + ja[g][i][1] * v.comps[1][g] + ja[g][i][2] * v.comps[2][g];
            }
            deriv(basis, &flux, i, &mut tmp);
            for p in 0..np {
                acc[p] += tmp[p];
            }
        }
        for p in 0..np {
            acc[p] /= jac[off + p];
        }
        for_face_points(space, e, |_, fp, g| {
            let n = normal[fp];
            let vn = v.comps[0][g] * n[0] + v.comps[1][g] * n[1] + v.comps[2][g] * n[2];
            let star = match space.link(fp) {
                FaceLink::Interior { nbr_node, .. } => {
                    let h = nbr_node;
                    let avg = 0.5 * (vn + v.comps[0][h] * n[0] + v.comps[1][h] * n[1] + v.comps[2][h] * n[2]);
                    match pen_field {
                        Some(pf) => match interface_penalty(space, policy.interface, fp, g, h) {
                            Ok(s) => avg - s * (pf.values[g] - pf.values[h]),
                            Err(x) => {
                                err.get_or_insert(x);
                                avg
                            }
                        },
                        None => avg,
                    }
                }
                FaceLink::Boundary { tag } => match rules[tag] {
                    BoundaryRule::InteriorTrace => vn,
                    BoundaryRule::NormalFlux(value) => value,
                    BoundaryRule::NormalFluxData => policy.face_data.as_ref().expect("resolved")[fp],
                },
            };
            out[g] += lift * fjac[fp] / jac[g] * (star - vn);
        });
    }
    match err {
        Some(x) => Err(x),
        None => Ok(Field::new(out)),
    }
}

/// `int [[U]]^2 dS` over each interior face, in mesh interior-face order.
pub fn surface_jump_norms(space: &DgSpace, u: &Field) -> Result<Vec<f64>> {
    space.check_field(u)?;
    let n1 = space.n1();
    let fjac = space.metrics().face_jacobian();
    let mut out = Vec::with_capacity(space.mesh().interior_faces().len());
    for f in space.mesh().interior_faces() {
        let mut s = 0.0;
        for b in 0..n1 {
            for a in 0..n1 {
                let fp = space.metrics().face_index(f.elem_l, f.face_l, a, b);
                let g = space.face_node(f.elem_l, f.face_l, a, b);
                if let FaceLink::Interior { nbr_node, .. } = space.link(fp) {
                    let d = u.values[g] - u.values[nbr_node];
                    s += space.face_weight(a, b) * fjac[fp] * d * d;
                }
            }
        }
        out.push(s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{distort_mesh, generate_box_mesh, Distortion};
    use crate::tensor::node;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn box_space(nx: usize, ny: usize, nz: usize, n: usize) -> DgSpace {
        DgSpace::new(generate_box_mesh(nx, ny, nz, [[-1.0, 1.0], [-1.0, 1.0], [0.0, 0.5]]).unwrap(), n).unwrap()
    }

    fn curved_space(n: usize) -> DgSpace {
        let m = generate_box_mesh(2, 2, 2, [[0.0, 1.0]; 3]).unwrap();
        DgSpace::new(distort_mesh(&m, Distortion::CurvedSine { ngeo: n }, 0.06).unwrap(), n).unwrap()
    }

    fn walls(space: &DgSpace) -> FacePolicy {
        FacePolicy::uniform(space, InterfaceRule::Average, BoundaryRule::NormalFlux(0.0))
    }

    #[test]
    fn sigma_examples() {
        assert_eq!(penalty_sigma(0.0, 5, 3.0, 2.0).unwrap(), 0.0);
        assert!((penalty_sigma(3.0, 4, 1.0, 1.0).unwrap() - 30.0).abs() < 1e-14);
        assert!((penalty_sigma(1.0, 1, 2.0, 0.5).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(penalty_sigma(-1.0, 1, 1.0, 1.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn gradient_of_constant_and_linear() {
        let s = curved_space(3);
        let pol = walls(&s);
        let g = dg_gradient(&s, &s.interpolate(|_| 2.5), &pol).unwrap();
        for c in &g.comps {
            assert!(c.iter().all(|v| v.abs() < 1e-11));
        }
        let s = box_space(3, 2, 2, 3);
        let g = dg_gradient(&s, &s.interpolate(|x| x[0]), &walls(&s)).unwrap();
        for p in 0..s.num_nodes() {
            let v = g.at(p);
            assert!((v[0] - 1.0).abs() < 1e-12 && v[1].abs() < 1e-12 && v[2].abs() < 1e-12);
        }
    }

    #[test]
    fn single_element_gradient_matches_tensor_oracle() {
        let s = box_space(1, 1, 1, 3);
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        let u = Field::new((0..s.num_nodes()).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let g = dg_gradient(&s, &u, &walls(&s)).unwrap();
        // affine box [-1,1]x[-1,1]x[0,0.5]: d/dx = D_xi, d/dy = D_eta, d/dz = 4 D_zeta
        let d = s.basis().diff_matrix();
        let n1 = 4;
        let scale = [1.0, 1.0, 4.0];
        for k in 0..n1 {
            for j in 0..n1 {
                for i in 0..n1 {
                    let idx = [i, j, k];
                    for dir in 0..3 {
                        let mut acc = 0.0;
                        for m in 0..n1 {
                            let mut id = idx;
                            id[dir] = m;
                            acc += d[idx[dir] * n1 + m] * u.values[node(n1, id[0], id[1], id[2])];
                        }
                        let got = g.comps[dir][node(n1, i, j, k)];
                        assert!((got - scale[dir] * acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn divergence_of_position_is_three() {
        let s = box_space(2, 2, 2, 3);
        let mut v = VecField::zeros(s.num_nodes());
        for (p, x) in s.coords().iter().enumerate() {
            for d in 0..3 {
                v.comps[d][p] = x[d];
            }
        }
        let nf = s.num_elements() * 6 * 16;
        let mut data = vec![0.0; nf];
        for e in 0..s.num_elements() {
            for f in 0..6 {
                for b in 0..4 {
                    for a in 0..4 {
                        let fp = s.metrics().face_index(e, f, a, b);
                        let x = s.coords()[s.face_node(e, f, a, b)];
                        let n = s.metrics().face_normal()[fp];
                        data[fp] = x[0] * n[0] + x[1] * n[1] + x[2] * n[2];
                    }
                }
            }
        }
        let mut pol = FacePolicy::uniform(&s, InterfaceRule::Average, BoundaryRule::NormalFluxData);
        pol.face_data = Some(data);
        let div = dg_divergence(&s, &v, &pol, None).unwrap();
        assert!(div.values.iter().all(|d| (d - 3.0).abs() < 1e-12));
    }

    #[test]
    fn free_stream_on_curved_mesh() {
        for n in 2..=5 {
            let s = curved_space(n);
            let c = [0.3, -1.2, 0.7];
            let mut v = VecField::zeros(s.num_nodes());
            for d in 0..3 {
                v.comps[d].fill(c[d]);
            }
            let pol = FacePolicy::uniform(&s, InterfaceRule::Average, BoundaryRule::InteriorTrace);
            let div = dg_divergence(&s, &v, &pol, None).unwrap();
            assert!(div.values.iter().all(|d| d.abs() < 1e-11), "N={n}");
        }
    }

    #[test]
    fn penalty_requires_scalar() {
        let s = box_space(2, 1, 1, 2);
        let pol = FacePolicy::uniform(
            &s,
            InterfaceRule::Penalty { kappa_sigma: 3.0, factor: 1.0 },
            BoundaryRule::NormalFlux(0.0),
        );
        let v = VecField::zeros(s.num_nodes());
        assert!(matches!(dg_divergence(&s, &v, &pol, None), Err(Error::Configuration(_))));
    }

    #[test]
    fn penalty_term_is_the_lifted_jump() {
        let s = DgSpace::new(generate_box_mesh(2, 1, 1, [[0.0, 2.0], [0.0, 1.0], [0.0, 1.0]]).unwrap(), 3).unwrap();
        let np = s.nodes_per_element();
        let w = Field::new((0..s.num_nodes()).map(|p| (p / np) as f64).collect());
        let mut rng = rand::rngs::StdRng::seed_from_u64(11);
        let mut v = VecField::zeros(s.num_nodes());
        for c in &mut v.comps {
            c.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
        }
        let plain = dg_divergence(&s, &v, &walls(&s), None).unwrap();
        let kappa = 3.0;
        let pen = FacePolicy::uniform(&s, InterfaceRule::Penalty { kappa_sigma: kappa, factor: 1.0 }, BoundaryRule::NormalFlux(0.0));
        let with = dg_divergence(&s, &v, &pen, Some(&w)).unwrap();
        // unit cube elements: J = 1/8, |J_f| = 1/4 on x faces, jump W_L - W_R = -1
        let sigma = kappa * 6.0 * 0.25 * 8.0;
        let lift = 1.0 / s.basis().weights()[0] * 0.25 * 8.0;
        for e in 0..2 {
            for p in 0..np {
                let g = e * np + p;
                let i = p % 4;
                let on_face = (e == 0 && i == 3) || (e == 1 && i == 0);
                let jump = if e == 0 { -1.0 } else { 1.0 };
                let expect = if on_face { -lift * sigma * jump } else { 0.0 };
                assert!((with.values[g] - plain.values[g] - expect).abs() < 1e-10 * sigma * lift);
            }
        }
    }

    #[test]
    fn jump_norms() {
        let s = DgSpace::new(generate_box_mesh(2, 1, 1, [[0.0, 2.0], [0.0, 1.0], [0.0, 1.0]]).unwrap(), 3).unwrap();
        let np = s.nodes_per_element();
        let u = Field::new((0..s.num_nodes()).map(|p| (p / np) as f64).collect());
        let j = surface_jump_norms(&s, &u).unwrap();
        assert_eq!(j.len(), 1);
        assert!((j[0] - 1.0).abs() < 1e-14);
        let c = surface_jump_norms(&s, &s.interpolate(|x| x[0] * x[1])).unwrap();
        assert!(c[0].abs() < 1e-24);
    }

    #[test]
    fn jump_norms_match_face_quadrature_oracle() {
        let s = curved_space(3);
        let mut rng = rand::rngs::StdRng::seed_from_u64(5);
        let u = Field::new((0..s.num_nodes()).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let got = surface_jump_norms(&s, &u).unwrap();
        let n = 3;
        let w = s.basis().weights();
        for (f, val) in s.mesh().interior_faces().iter().zip(&got) {
            let mut acc = 0.0;
            for b in 0..=n {
                for a in 0..=n {
                    let (p, q) = crate::geometry::orient(f.orientation, n, a, b);
                    let l = s.face_node(f.elem_l, f.face_l, a, b);
                    let r = s.face_node(f.elem_r, f.face_r, p, q);
                    let jf = s.metrics().face_jacobian()[s.metrics().face_index(f.elem_l, f.face_l, a, b)];
                    acc += w[a] * w[b] * jf * (u.values[l] - u.values[r]).powi(2);
                }
            }
            assert!((acc - val).abs() < 1e-13);
        }
    }

    fn random_field(s: &DgSpace, rng: &mut impl Rng) -> Field {
        Field::new((0..s.num_nodes()).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn adjoint_up_to_surface_terms(seed in 0u64..1000, n in 2usize..5) {
            let s = curved_space(n);
            let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
            let u = random_field(&s, &mut rng);
            let mut v = VecField::zeros(s.num_nodes());
            for c in &mut v.comps {
                c.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
            }
            let pol = FacePolicy::uniform(&s, InterfaceRule::Average, BoundaryRule::InteriorTrace);
            let g = dg_gradient(&s, &u, &pol).unwrap();
            let d = dg_divergence(&s, &v, &pol, None).unwrap();
            let lhs: f64 = (0..3).map(|c| s.inner(&g.comps[c], &v.comps[c])).sum::<f64>() + s.inner(&u.values, &d.values);
            let n1 = s.n1();
            let mut surf = 0.0;
            for e in 0..s.num_elements() {
                for_face_points(&s, e, |face, fp, g| {
                    if let FaceLink::Boundary { .. } = s.link(fp) {
                        let local = fp - (e * 6 + face) * n1 * n1;
                        let (a, b) = (local % n1, local / n1);
                        let nrm = s.metrics().face_normal()[fp];
                        let vn = v.comps[0][g] * nrm[0] + v.comps[1][g] * nrm[1] + v.comps[2][g] * nrm[2];
                        surf += s.face_weight(a, b) * s.metrics().face_jacobian()[fp] * u.values[g] * vn;
                    }
                });
            }
            prop_assert!((lhs - surf).abs() < 1e-11, "{} vs {}", lhs, surf);
        }

        #[test]
        fn divergence_conserves_with_zero_walls(seed in 0u64..1000) {
            let s = curved_space(3);
            let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
            let mut v = VecField::zeros(s.num_nodes());
            for c in &mut v.comps {
                c.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
            }
            let w = random_field(&s, &mut rng);
            let pol = FacePolicy::uniform(&s, InterfaceRule::Penalty { kappa_sigma: 3.0, factor: 1.0 }, BoundaryRule::NormalFlux(0.0));
            let d = dg_divergence(&s, &v, &pol, Some(&w)).unwrap();
            prop_assert!(s.integrate(&d.values).abs() < 1e-11);
        }
    }
}
