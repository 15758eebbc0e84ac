//! Acceptance suite. Runs every check, prints one line each, exits nonzero on any failure.

// negated comparisons make NaN a failure
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

use std::collections::VecDeque;
use std::f64::consts::TAU;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use boxspace::box_space::{assemble_box_space, BoxPoint, BoxSpace};
use boxspace::cocycle::{averaged_cocycle, cocycle_sandwich, forge_family, lift_to_group, local_cocycle_from_fce, ultraproduct_hypothesis_check, verify_local_action, LocalCocycle};
use boxspace::embedding::{cycle_plane, linf_embedding, pnorm_power_check, profile, torus_embedding, CoarseEmbeddingMap, Control, Exponent};
use boxspace::fce::{from_proper_action, trivial_fibration, verify_fce, AffineAction, FibredEmbedding, SubsetMode};
use boxspace::group_chain::{build_quotient, AmbientElement, AmbientGroup, GroupChain, MarkedQuotient, QuotientSpec};
use boxspace::spectral::laplacian_gap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Check = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn cyclic_chain(moduli: &[u64]) -> Arc<GroupChain> {
    let z = AmbientGroup::FreeAbelian { rank: 1 };
    let levels = moduli
        .iter()
        .map(|&m| build_quotient(&z, &QuotientSpec::Cyclic { moduli: vec![m] }).unwrap())
        .collect();
    Arc::new(GroupChain::new(z, levels).unwrap())
}

fn torus_chain(sides: &[u64]) -> Arc<GroupChain> {
    let z2 = AmbientGroup::FreeAbelian { rank: 2 };
    let levels = sides
        .iter()
        .map(|&m| build_quotient(&z2, &QuotientSpec::Cyclic { moduli: vec![m, m] }).unwrap())
        .collect();
    Arc::new(GroupChain::new(z2, levels).unwrap())
}

fn boxed(chain: Arc<GroupChain>) -> Arc<BoxSpace> {
    Arc::new(assemble_box_space(chain))
}

fn dyadic() -> Arc<GroupChain> {
    cyclic_chain(&[2, 4, 8, 16, 32, 64])
}

/// Word distances from the identity by breadth-first search over the multiplication of `q`.
fn bfs_lengths(q: &MarkedQuotient) -> Vec<u64> {
    let n = q.order();
    let mut dist = vec![u64::MAX; n];
    dist[q.identity()] = 0;
    let mut queue = VecDeque::from([q.identity()]);
    let gens: Vec<usize> = q.gen_images().iter().flat_map(|&s| [s, q.inverse(s)]).collect();
    while let Some(x) = queue.pop_front() {
        for &s in &gens {
            let y = q.multiply(x, s);
            if dist[y] == u64::MAX {
                dist[y] = dist[x] + 1;
                queue.push_back(y);
            }
        }
    }
    dist
}

/// All-pairs box distances from an explicit graph: each level's Cayley graph plus a path of
/// `max(diam_i, diam_{i+1}) + 1` edges joining consecutive identities.
fn box_oracle(chain: &GroupChain) -> Vec<Vec<u64>> {
    let mut adj: Vec<Vec<usize>> = Vec::new();
    let mut identities = Vec::new();
    let mut diameters = Vec::new();
    for q in chain.levels() {
        let off = adj.len();
        adj.extend((0..q.order()).map(|_| Vec::new()));
        for x in 0..q.order() {
            for &s in q.gen_images() {
                for t in [s, q.inverse(s)] {
                    let y = q.multiply(x, t);
                    adj[off + x].push(off + y);
                    adj[off + y].push(off + x);
                }
            }
        }
        identities.push(off + q.identity());
        diameters.push(*bfs_lengths(q).iter().max().unwrap());
    }
    let points = adj.len();
    for i in 0..chain.len().saturating_sub(1) {
        let sep = diameters[i].max(diameters[i + 1]) + 1;
        let mut prev = identities[i];
        for _ in 1..sep {
            adj.push(Vec::new());
            let v = adj.len() - 1;
            adj[prev].push(v);
            adj[v].push(prev);
            prev = v;
        }
        adj[prev].push(identities[i + 1]);
        adj[identities[i + 1]].push(prev);
    }
    (0..points)
        .map(|s| {
            let mut dist = vec![u64::MAX; adj.len()];
            dist[s] = 0;
            let mut queue = VecDeque::from([s]);
            while let Some(x) = queue.pop_front() {
                for &y in &adj[x] {
                    if dist[y] == u64::MAX {
                        dist[y] = dist[x] + 1;
                        queue.push_back(y);
                    }
                }
            }
            dist.truncate(points);
            dist
        })
        .collect()
}

fn linf_isometry() -> Outcome {
    let start = Instant::now();
    let chain = cyclic_chain(&[4, 8, 16]);
    let b = boxed(chain.clone());
    let f = linf_embedding(b.clone(), BoxPoint::new(0, 0)).map_err(|e| e.to_string())?;
    let oracle = box_oracle(&chain);
    let n = b.point_count();
    for i in 0..n {
        for j in 0..n {
            let norm = f.image_distance(i, j);
            ensure!(oracle[i][j] == b.distance_by_index(i, j), "box metric differs from the graph oracle at ({i}, {j})");
            ensure!(norm == oracle[i][j] as f64, "‖f(x) − f(y)‖ = {norm} but d = {} at ({i}, {j})", oracle[i][j]);
        }
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!("{} ordered pairs, exact equality", n * n))
}

/// Integer coordinates `x ↦ (x_1, ..., x_k)` with `0 <= x_c < m_c`.
fn coordinate_embedding(b: Arc<BoxSpace>, p: Exponent) -> CoarseEmbeddingMap {
    let rows = b
        .points()
        .map(|x| b.chain().level(x.level).abelian_coordinates(x.element).unwrap().into_iter().map(|c| c as f64).collect())
        .collect();
    CoarseEmbeddingMap::new(b, p, rows).unwrap()
}

fn averaged_instances() -> Vec<(String, CoarseEmbeddingMap)> {
    let mut out = Vec::new();
    for p in [1.0, 2.0, 3.0] {
        let p = Exponent::new(p).unwrap();
        for m in [4u64, 8] {
            out.push((format!("Z/{m} planar p={p}"), cycle_plane(boxed(cyclic_chain(&[m])), p).unwrap()));
        }
        out.push((format!("4x4 torus circles p={p}"), torus_embedding(boxed(torus_chain(&[4])), p).unwrap()));
        out.push((format!("4x4 torus coordinates p={p}"), coordinate_embedding(boxed(torus_chain(&[4])), p)));
    }
    out
}

/// `b(x)` block `z` evaluated directly: `(f(zx) − f(z)) / N^{1/p}`.
fn direct_average(f: &CoarseEmbeddingMap, x: usize) -> Vec<f64> {
    let q = f.domain().chain().level(0);
    let n = q.order() as f64;
    let s = if f.p().is_infinite() { 1.0 } else { n.powf(-1.0 / f.p().value()) };
    (0..q.order()).flat_map(|z| f.row(q.multiply(z, x)).iter().zip(f.row(z)).map(move |(a, b)| (a - b) * s).collect::<Vec<_>>()).collect()
}

fn averaged_law() -> Outcome {
    let start = Instant::now();
    let mut checked = 0;
    for (name, f) in averaged_instances() {
        let coc = averaged_cocycle(&f, 0).map_err(|e| e.to_string())?;
        let rep = verify_local_action(coc.representation(), &coc, Some(1e-12)).map_err(|e| e.to_string())?;
        ensure!(rep.pass, "{name}: verifier reports {:?}", rep.cocycle.witnesses.first());
        if f.p().value() == 1.0 && f.is_integral() {
            let exact = verify_local_action(coc.representation(), &coc, None).map_err(|e| e.to_string())?;
            ensure!(exact.pass && exact.tolerance == 0.0, "{name}: exact check failed");
        }
        let q = f.domain().chain().level(0);
        let d = f.dim();
        for x in 0..q.order() {
            let bx = direct_average(&f, x);
            for (a, b) in coc.value(x).iter().zip(&bx) {
                ensure!((a - b).abs() <= 1e-12, "{name}: stored b({x}) differs from direct evaluation");
            }
            for y in 0..q.order() {
                let by = direct_average(&f, y);
                let bxy = direct_average(&f, q.multiply(x, y));
                for z in 0..q.order() {
                    let zx = q.multiply(z, x);
                    for c in 0..d {
                        let lhs = by[zx * d + c] + bx[z * d + c];
                        ensure!((lhs - bxy[z * d + c]).abs() <= 1e-12, "{name}: identity fails at x={x}, y={y}, z={z}");
                    }
                }
                checked += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!("{checked} pairs over 12 instances, tolerance 1e-12"))
}

fn averaged_sandwich() -> Outcome {
    let mut checked = 0;
    for (name, f) in averaged_instances() {
        let prof = profile(&f).map_err(|e| e.to_string())?;
        let coc = averaged_cocycle(&f, 0).map_err(|e| e.to_string())?;
        let q = f.domain().chain().level(0);
        let lengths = bfs_lengths(q);
        for x in 0..q.order() {
            let bx = direct_average(&f, x);
            let norm = f.p().norm(&bx);
            ensure!((norm - coc.norm(x)).abs() <= 1e-9, "{name}: norm of b({x}) disagrees");
            let s = prof.get(lengths[x]).ok_or(format!("{name}: no profile sample at {}", lengths[x]))?;
            ensure!(s.rho_minus <= norm + 1e-9 && norm <= s.rho_plus + 1e-9, "{name}: {} <= {norm} <= {} fails at x={x}", s.rho_minus, s.rho_plus);
            checked += 1;
        }
        let rep = cocycle_sandwich(&coc, &prof.lower(), &prof.upper(), 1e-9).map_err(|e| e.to_string())?;
        ensure!(rep.pass, "{name}: library sandwich check failed");
    }
    Ok(format!("{checked} elements, tolerance 1e-9"))
}

fn trivial_fibration_certifies() -> Outcome {
    let mut runs = 0;
    let spaces = [cyclic_chain(&[4, 8]), cyclic_chain(&[2, 4, 8]), cyclic_chain(&[16]), torus_chain(&[4])];
    for chain in spaces {
        let b = boxed(chain);
        ensure!(b.point_count() <= 16, "space too large");
        let f = linf_embedding(b.clone(), BoxPoint::new(0, 0)).map_err(|e| e.to_string())?;
        let fib = trivial_fibration(&f);
        for r in 2..=b.diameter() {
            let rep = verify_fce(&fib, r, &Control::Identity, &Control::Identity, SubsetMode::All, None).map_err(|e| e.to_string())?;
            ensure!(rep.condition_i.pass, "{} points, r={r}: condition i fails", b.point_count());
            ensure!(rep.condition_ii.pass, "{} points, r={r}: condition ii fails", b.point_count());
            runs += 1;
        }
    }
    Ok(format!("{runs} (space, r) runs in subset mode all"))
}

fn proper_action_certifies() -> Outcome {
    let start = Instant::now();
    let mut subsets = 0;
    for p in [Exponent::ONE, Exponent::TWO] {
        let fib = from_proper_action(dyadic(), AffineAction::translation(1, p), 5).map_err(|e| e.to_string())?;
        for r in 1..=5 {
            let rep = verify_fce(&fib, r, &Control::Identity, &Control::Identity, SubsetMode::BallsAndPairs, None).map_err(|e| e.to_string())?;
            ensure!(rep.pass, "p={p}, r={r}: {:?} {:?}", rep.condition_i.witnesses.first(), rep.condition_ii.witnesses.first());
            subsets += rep.subsets_checked;
        }
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!("{subsets} admissible subsets, rho1 = rho2 = t"))
}

/// `x ↦ min(k, m − k)` on every cyclic level, integer valued in ℓ¹.
fn fold_embedding(b: Arc<BoxSpace>) -> CoarseEmbeddingMap {
    let rows = b
        .points()
        .map(|x| {
            let m = b.chain().level(x.level).order();
            vec![x.element.min(m - x.element) as f64]
        })
        .collect();
    CoarseEmbeddingMap::new(b, Exponent::ONE, rows).unwrap()
}

fn local_cocycle_law() -> Outcome {
    let r = 4;
    for p in [Exponent::ONE, Exponent::TWO] {
        let fib = from_proper_action(dyadic(), AffineAction::translation(1, p), 5).map_err(|e| e.to_string())?;
        let coc = local_cocycle_from_fce(&fib, r).map_err(|e| e.to_string())?;
        let rep = verify_local_action(coc.representation(), &coc, Some(1e-9)).map_err(|e| e.to_string())?;
        ensure!(rep.pass, "p={p}: {:?}", rep.cocycle.witnesses.first());
        // oracle: every block of the raw value is minus the integer lift of x
        let m = coc.block_count as i64;
        for x in 0..coc.block_count {
            let lift = if (x as i64) <= m / 2 { x as i64 } else { x as i64 - m };
            match coc.raw(x) {
                Some(v) => {
                    ensure!(lift.unsigned_abs() < r, "value stored outside the ball at {x}");
                    ensure!(v.iter().all(|&c| c == -(lift as f64)), "p={p}: block values of b({x}) are not {}", -lift);
                }
                None => ensure!(lift.unsigned_abs() >= r, "missing value at {x}"),
            }
        }
    }
    let mut cross = 0;
    let instances: Vec<CoarseEmbeddingMap> = vec![
        fold_embedding(boxed(cyclic_chain(&[4, 8, 16, 32]))),
        linf_embedding(boxed(cyclic_chain(&[4, 8, 16])), BoxPoint::new(0, 0)).unwrap(),
        torus_embedding(boxed(cyclic_chain(&[4, 8, 16])), Exponent::TWO).unwrap(),
    ];
    for f in instances {
        let local = local_cocycle_from_fce(&trivial_fibration(&f), r).map_err(|e| e.to_string())?;
        let avg = averaged_cocycle(&f, local.block_level).map_err(|e| e.to_string())?;
        let exact = f.is_integral() && (f.p().value() == 1.0 || f.p().is_infinite());
        for x in 0..local.carrier().order() {
            let expected: Vec<f64> =
                if local.carrier().length(x) < r { avg.value(x).iter().map(|v| -v).collect() } else { vec![0.0; avg.value(x).len()] };
            let got = local.value(x);
            if exact {
                ensure!(got == expected, "p={}: cross-oracle differs at {x}", f.p());
            } else {
                ensure!(got.iter().zip(&expected).all(|(a, b)| (a - b).abs() <= 1e-12), "p={}: cross-oracle differs at {x}", f.p());
            }
            cross += 1;
        }
    }
    Ok(format!("r = 4 identity on p in {{1, 2}}; {cross} cross-oracle values"))
}

fn ultraproduct_hypotheses() -> Outcome {
    let tests: Vec<AmbientElement> = (-3..=3).map(|n| AmbientElement::Vector(vec![n])).collect();
    for p in [Exponent::ONE, Exponent::TWO] {
        let fib = from_proper_action(dyadic(), AffineAction::translation(1, p), 5).map_err(|e| e.to_string())?;
        let fam = forge_family(&fib, 2..=6).map_err(|e| e.to_string())?;
        let rep = ultraproduct_hypothesis_check(&fam, &Control::Identity, &Control::Identity, &tests).map_err(|e| e.to_string())?;
        ensure!(rep.pass, "p={p}: bounded={} eventually_proper={}", rep.bounded, rep.eventually_proper);
        for e in &rep.elements {
            ensure!(!e.eventual.is_empty(), "no radius beyond |g| for {}", e.g);
            ensure!(e.eventual.iter().all(|&(_, v)| v == e.length as f64), "p={p}: sequence of {} is {:?}", e.g, e.eventual);
        }
    }
    Ok("r = 2..6, |g| <= 3, eventual sequences equal |g| exactly".into())
}

fn radius_closed_form() -> Outcome {
    for m in 2u64..=32 {
        let chain = cyclic_chain(&[m]);
        let lengths = bfs_lengths(chain.level(0));
        let oracle = (1..=2 * m as i64).find(|&n| lengths[(n as u64 % m) as usize] < n as u64).unwrap() as u64;
        ensure!(oracle == m / 2 + 1, "oracle gives {oracle} for m={m}");
        ensure!(chain.r_isometric_radius(0) == oracle, "library gives {} for m={m}", chain.r_isometric_radius(0));
    }
    Ok("m = 2..32".into())
}

fn norm_power_constant() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x00c0_ffee);
    let exps = [1.0, 1.5, 2.0, 4.0];
    for trial in 0..1000 {
        let n = rng.random_range(1..=8usize);
        let p = exps[trial % exps.len()];
        let k = rng.random_range(0.0..10.0);
        let k2 = k + rng.random_range(0.0..10.0);
        let blocks: Vec<f64> = (0..n).map(|_| rng.random_range(k..=k2)).collect();
        let rep = pnorm_power_check(n, Exponent::new(p).unwrap(), &blocks, k, k2).map_err(|e| e.to_string())?;
        let c = (n as f64).powf(1.0 / p);
        let combined = blocks.iter().map(|b| b.powf(p)).sum::<f64>().powf(1.0 / p);
        ensure!((rep.c - c).abs() <= 1e-12 && (rep.combined - combined).abs() <= 1e-9, "trial {trial}: c or N disagrees");
        ensure!(rep.hypothesis && rep.holds, "trial {trial}: library reports failure");
        ensure!(c * k <= combined + 1e-9 && combined <= c * k2 + 1e-9, "trial {trial}: {} <= {combined} <= {} fails", c * k, c * k2);
    }
    Ok("1000 randomized trials".into())
}

fn spectral_closed_form() -> Outcome {
    let mut worst: f64 = 0.0;
    for n in 3u64..=64 {
        let q = build_quotient(&AmbientGroup::FreeAbelian { rank: 1 }, &QuotientSpec::Cyclic { moduli: vec![n] }).unwrap();
        let err = (laplacian_gap(&q) - (1.0 - (TAU / n as f64).cos())).abs();
        ensure!(err <= 1e-9, "n={n}: error {err:e}");
        worst = worst.max(err);
    }
    Ok(format!("n = 3..64, max error {worst:.1e}"))
}

fn cocycle_mutations(name: &str, coc: &LocalCocycle, rng: &mut ChaCha8Rng) -> Result<(), String> {
    let base = verify_local_action(coc.representation(), coc, None).map_err(|e| e.to_string())?;
    ensure!(base.pass, "{name}: unmutated cocycle fails");
    let stored: Vec<usize> = coc.stored().collect();
    let width = coc.block_count * coc.block_dim;
    for k in 0..100 {
        let g = stored[rng.random_range(0..stored.len())];
        let c = rng.random_range(0..width);
        let bad = coc.with_offset(g, c, 1.0);
        let rep = verify_local_action(bad.representation(), &bad, None).map_err(|e| e.to_string())?;
        ensure!(!rep.pass, "{name}: mutation {k} (g = {}, coordinate {c}) undetected", coc.carrier().label(g));
    }
    Ok(())
}

fn trivialization_mutations(name: &str, fib: &FibredEmbedding, r: u64, mode: SubsetMode, rng: &mut ChaCha8Rng) -> Result<(), String> {
    let stored = fib.materialize(&[r], mode).map_err(|e| e.to_string())?;
    let verify = |f: &FibredEmbedding| verify_fce(f, r, &Control::Identity, &Control::Identity, mode, None).map_err(|e| e.to_string());
    ensure!(verify(&stored)?.pass, "{name}: unmutated fibration fails");
    // one-point subsets have no pair to constrain their trivialization
    let keys: Vec<(u64, Vec<usize>)> = stored.table().unwrap().maps.keys().filter(|(_, s)| s.len() > 1).cloned().collect();
    for k in 0..100 {
        let (kr, subset) = &keys[rng.random_range(0..keys.len())];
        let position = rng.random_range(0..subset.len());
        let coordinate = rng.random_range(0..fib.dim());
        let mut bad = stored.clone();
        bad.table_mut().unwrap().flip_sign(*kr, subset, position, coordinate).map_err(|e| e.to_string())?;
        ensure!(!verify(&bad)?.pass, "{name}: sign flip {k} at {subset:?}[{position}], coordinate {coordinate} undetected");
    }
    Ok(())
}

fn mutation_sensitivity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0bad_5eed);
    let planar = cycle_plane(boxed(cyclic_chain(&[8])), Exponent::TWO).unwrap();
    cocycle_mutations("averaged Z/8 planar", &averaged_cocycle(&planar, 0).unwrap(), &mut rng)?;
    let coords = coordinate_embedding(boxed(torus_chain(&[4])), Exponent::ONE);
    cocycle_mutations("averaged 4x4 torus", &averaged_cocycle(&coords, 0).unwrap(), &mut rng)?;
    let fib = from_proper_action(dyadic(), AffineAction::translation(1, Exponent::ONE), 5).unwrap();
    let local = local_cocycle_from_fce(&fib, 4).unwrap();
    cocycle_mutations("local r=4", &local, &mut rng)?;
    cocycle_mutations("lifted r=4", &lift_to_group(&local, 4).unwrap(), &mut rng)?;

    let linf = linf_embedding(boxed(cyclic_chain(&[4, 8])), BoxPoint::new(0, 0)).unwrap();
    trivialization_mutations("trivial linf fibration", &trivial_fibration(&linf), 4, SubsetMode::All, &mut rng)?;
    trivialization_mutations("translation fibration", &fib, 4, SubsetMode::Balls, &mut rng)?;
    let torus = from_proper_action(torus_chain(&[2, 4, 8, 16]), AffineAction::translation(2, Exponent::ONE), 3).unwrap();
    trivialization_mutations("torus translation fibration", &torus, 3, SubsetMode::Balls, &mut rng)?;
    Ok("7 instances x 100 single mutations, all detected".into())
}

fn main() {
    let checks: [Check; 11] = [
        ("linf embedding is isometric", linf_isometry),
        ("averaged cocycle identity", averaged_law),
        ("averaged cocycle sandwich", averaged_sandwich),
        ("trivial fibration passes both conditions", trivial_fibration_certifies),
        ("translation action fibration passes", proper_action_certifies),
        ("r-local cocycle identity and cross-oracle", local_cocycle_law),
        ("ultraproduct hypotheses on the family", ultraproduct_hypotheses),
        ("isometry radius of Z -> Z/m", radius_closed_form),
        ("norm-power constant", norm_power_constant),
        ("spectral gap of cycles", spectral_closed_form),
        ("mutation sensitivity", mutation_sensitivity),
    ];
    let mut failures = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        let ms = start.elapsed().as_secs_f64() * 1e3;
        match outcome {
            Ok(detail) => println!("acceptance {:>2} PASS  {name} ({detail}) [{ms:.0} ms]", i + 1),
            Err(why) => {
                failures += 1;
                println!("acceptance {:>2} FAIL  {name}: {why} [{ms:.0} ms]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failures} failed", checks.len() - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
