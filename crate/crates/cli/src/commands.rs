use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use boxspace::chain_file::{load_chain, ChainFile};
use boxspace::cocycle::{
    averaged_cocycle, cocycle_sandwich, forge_family, local_cocycle_from_fce, ultraproduct_hypothesis_check, verify_local_action,
    LocalCocycle,
};
use boxspace::embedding::{cycle_plane, linf_embedding, profile, torus_embedding, verify_coarse, CoarseEmbeddingMap, Control, Exponent};
use boxspace::fce::{from_proper_action, trivial_fibration, verify_fce, FibredEmbedding, SubsetMode};
use boxspace::spectral::expander_scan;
use boxspace::{assemble_box_space, BoxPoint, BoxSpace, Error, Result};
use serde_json::{json, Value};

use crate::{Command, Common, Controls, ForgeMode};

/// Collects output files; writes them under `--out` or prints them to stdout.
struct Sink {
    out: Option<PathBuf>,
}

impl Sink {
    fn new(common: &Common) -> Result<Self> {
        if let Some(dir) = &common.out {
            std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
        }
        Ok(Sink { out: common.out.clone() })
    }

    fn emit(&self, name: &str, body: &str) -> Result<()> {
        match &self.out {
            Some(dir) => {
                let path = dir.join(name);
                std::fs::write(&path, body).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
                println!("wrote {}", path.display());
            }
            None => {
                println!("# file: {name}");
                print!("{body}");
                if !body.ends_with('\n') {
                    println!();
                }
            }
        }
        Ok(())
    }

    fn emit_json(&self, name: &str, value: &Value) -> Result<()> {
        let mut body = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
        body.push('\n');
        self.emit(name, &body)
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn verdict(name: &str, pass: bool) -> bool {
    if pass {
        println!("{name}: pass");
    } else {
        eprintln!("{name}: FAIL (witnesses in the report)");
    }
    pass
}

pub fn run(command: Command) -> Result<bool> {
    match command {
        Command::Build { common, distances } => build(&common, distances),
        Command::Profile { common, embedding, p, lower, upper } => profile_cmd(&common, &embedding, p, lower, upper),
        Command::Forge { common, mode, embedding, p, r, level, test_radius, replay, controls } => {
            forge(&common, mode, &embedding, p, r, level, test_radius, replay.as_deref(), &controls)
        }
        Command::FceVerify { common, embedding, p, r, all_scales, subsets, dump, controls } => {
            fce_verify(&common, &embedding, p, r, all_scales, subsets, dump, &controls)
        }
        Command::Spectral { common, epsilon } => spectral(&common, epsilon),
    }
}

fn load(common: &Common) -> Result<(ChainFile, Arc<BoxSpace>)> {
    let file = load_chain(&common.chain)?;
    for w in file.chain.warnings() {
        eprintln!("warning: {w}");
    }
    let b = Arc::new(assemble_box_space(file.chain.clone()));
    Ok((file, b))
}

fn embedding_source(b: &Arc<BoxSpace>, source: &str, p: Option<Exponent>) -> Result<CoarseEmbeddingMap> {
    match source {
        "linf" => {
            if p.is_some_and(|p| !p.is_infinite()) {
                return Err(Error::ExponentMismatch { expected: "inf".into(), found: p.unwrap().to_string() });
            }
            linf_embedding(b.clone(), BoxPoint::new(0, b.chain().level(0).identity()))
        }
        "torus-lp" => torus_embedding(b.clone(), p.unwrap_or(Exponent::TWO)),
        "cycle-plane" => cycle_plane(b.clone(), p.unwrap_or(Exponent::TWO)),
        path => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{path}: {e}")))?;
            let f = CoarseEmbeddingMap::from_csv(b.clone(), &text)?;
            match p {
                Some(p) if p != f.p() => Err(Error::ExponentMismatch { expected: p.to_string(), found: f.p().to_string() }),
                _ => Ok(f),
            }
        }
    }
}

fn build(common: &Common, distances: bool) -> Result<bool> {
    let (file, b) = load(common)?;
    let chain = &file.chain;
    let mut csv = String::from("level,name,order,diameter,radius,separation\n");
    for (i, q) in chain.levels().iter().enumerate() {
        let sep = b.separations().get(i).map(u64::to_string).unwrap_or_default();
        let name = file.level_names[i].as_deref().unwrap_or("");
        writeln!(csv, "{i},{name},{},{},{},{sep}", q.order(), b.diameters()[i], chain.r_isometric_radius(i)).unwrap();
    }
    let sink = Sink::new(common)?;
    sink.emit("levels.csv", &csv)?;
    if distances {
        sink.emit("distances.csv", &b.distance_csv())?;
    }
    Ok(true)
}

fn profile_cmd(common: &Common, source: &str, p: Option<Exponent>, lower: Option<Control>, upper: Option<Control>) -> Result<bool> {
    let (_, b) = load(common)?;
    let f = embedding_source(&b, source, p)?;
    let prof = profile(&f)?;
    let sink = Sink::new(common)?;
    sink.emit("embedding.csv", &f.to_csv())?;
    sink.emit("profile.csv", &prof.to_csv())?;
    if lower.is_none() && upper.is_none() {
        return Ok(true);
    }
    let lower = lower.unwrap_or_else(|| prof.lower());
    let upper = upper.unwrap_or_else(|| prof.upper());
    let report = verify_coarse(&f, &lower, &upper, common.tolerance)?;
    sink.emit_json("coarse_report.json", &to_json(&report))?;
    Ok(verdict("coarse embedding check", report.pass))
}

/// The chain file's action if it has one, else the trivial fibration of `source`.
fn fibration(file: &ChainFile, b: &Arc<BoxSpace>, source: &str, p: Option<Exponent>, r_max: u64) -> Result<(FibredEmbedding, &'static str)> {
    match &file.action {
        Some(action) => {
            if let Some(p) = p.filter(|&p| p != action.p) {
                return Err(Error::ExponentMismatch { expected: action.p.to_string(), found: p.to_string() });
            }
            Ok((from_proper_action(file.chain.clone(), action.clone(), r_max)?, "action"))
        }
        None => Ok((trivial_fibration(&embedding_source(b, source, p)?), "trivial")),
    }
}

fn replayed(coc: &LocalCocycle, replay: Option<&Path>) -> Result<LocalCocycle> {
    match replay {
        None => Ok(coc.clone()),
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            coc.replay(&text)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn forge(
    common: &Common,
    mode: ForgeMode,
    source: &str,
    p: Option<Exponent>,
    r: u64,
    level: usize,
    test_radius: u64,
    replay: Option<&Path>,
    controls: &Controls,
) -> Result<bool> {
    let (file, b) = load(common)?;
    let sink = Sink::new(common)?;
    match mode {
        ForgeMode::Averaged => {
            if level >= file.chain.len() {
                return Err(Error::InvalidChain(format!("no level {level}")));
            }
            let f = embedding_source(&b, source, p)?;
            let fresh = averaged_cocycle(&f, level)?;
            let coc = replayed(&fresh, replay)?;
            let law = verify_local_action(coc.representation(), &coc, common.tolerance)?;
            let prof = profile(&f)?;
            let sandwich = cocycle_sandwich(&coc, &prof.lower(), &prof.upper(), common.tolerance.unwrap_or(1e-9))?;
            if replay.is_none() {
                sink.emit("cocycle.csv", &coc.to_csv())?;
            }
            let pass = law.pass && sandwich.pass;
            sink.emit_json("forge_report.json", &json!({ "mode": "averaged", "level": level, "pass": pass, "law": to_json(&law), "sandwich": to_json(&sandwich) }))?;
            Ok(verdict("averaged cocycle", pass))
        }
        ForgeMode::Fce => {
            let (fib, kind) = fibration(&file, &b, source, p, 2 * r.max(1) - 1)?;
            let fresh = local_cocycle_from_fce(&fib, r)?;
            let coc = replayed(&fresh, replay)?;
            let law = verify_local_action(coc.representation(), &coc, common.tolerance)?;
            let mut report = json!({ "mode": "fce", "fibration": kind, "r": r, "level": coc.block_level, "law": to_json(&law) });
            let mut pass = law.pass;
            if kind == "trivial" && replay.is_none() {
                let cross = cross_check(&embedding_source(&b, source, p)?, &coc)?;
                pass &= cross["agrees"].as_bool().unwrap_or(false);
                report["cross_check"] = cross;
            }
            report["pass"] = json!(pass);
            if replay.is_none() {
                sink.emit("cocycle.csv", &coc.to_csv())?;
            }
            sink.emit_json("forge_report.json", &report)?;
            Ok(verdict("local cocycle", pass))
        }
        ForgeMode::Family => {
            if replay.is_some() {
                return Err(Error::Unsupported("--replay applies to the averaged and fce modes".into()));
            }
            if r < 2 {
                return Err(Error::InvalidChain("a family needs --r >= 2".into()));
            }
            let (fib, kind) = fibration(&file, &b, source, p, 2 * r - 1)?;
            let family = forge_family(&fib, 2..=r)?;
            let tests = file.chain.ambient_ball(test_radius + 1);
            let report = ultraproduct_hypothesis_check(&family, &controls.lower, &controls.upper, &tests)?;
            let mut csv = String::from("g,length");
            for (radius, _) in family.entries() {
                write!(csv, ",r{radius}").unwrap();
            }
            csv.push('\n');
            for e in &report.elements {
                write!(csv, "{},{}", e.g, e.length).unwrap();
                for (_, v) in &e.norms {
                    write!(csv, ",{v}").unwrap();
                }
                csv.push('\n');
            }
            sink.emit("family_norms.csv", &csv)?;
            sink.emit_json("forge_report.json", &json!({ "mode": "family", "fibration": kind, "radii": [2, r], "pass": report.pass, "hypotheses": to_json(&report) }))?;
            Ok(verdict("cocycle family", report.pass))
        }
    }
}

/// On a trivial fibration the local cocycle is the negated averaged cocycle inside the ball.
fn cross_check(f: &CoarseEmbeddingMap, local: &LocalCocycle) -> Result<Value> {
    let avg = averaged_cocycle(f, local.block_level)?;
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    for g in local.stored() {
        let (l, a) = (local.value(g), avg.value(g));
        worst = l.iter().zip(&a).fold(worst, |m, (x, y)| m.max((x + y).abs()));
        compared += 1;
    }
    let tol = if f.is_integral() && f.p().value() == 1.0 { 0.0 } else { 1e-12 };
    Ok(json!({ "against": "negated averaged cocycle", "compared": compared, "max_discrepancy": worst, "tolerance": tol, "agrees": worst <= tol }))
}

#[allow(clippy::too_many_arguments)]
fn fce_verify(
    common: &Common,
    source: &str,
    p: Option<Exponent>,
    r: u64,
    all_scales: bool,
    mode: SubsetMode,
    dump: bool,
    controls: &Controls,
) -> Result<bool> {
    if r == 0 {
        return Err(Error::InvalidChain("--r must be at least 1".into()));
    }
    let (file, b) = load(common)?;
    let (fib, kind) = fibration(&file, &b, source, p, r)?;
    let scales: Vec<u64> = if all_scales { (1..=r).collect() } else { vec![r] };
    let sink = Sink::new(common)?;
    let mut reports = Vec::new();
    let mut pass = true;
    for &s in &scales {
        let rep = verify_fce(&fib, s, &controls.lower, &controls.upper, mode, common.tolerance)?;
        println!(
            "r={s}: {} subsets, {} pairs, {} overlaps, condition i {}, condition ii {}",
            rep.subsets_checked,
            rep.pairs_checked,
            rep.overlaps_checked,
            if rep.condition_i.pass { "ok" } else { "violated" },
            if rep.condition_ii.pass { "ok" } else { "violated" }
        );
        pass &= rep.pass;
        reports.push(to_json(&rep));
    }
    if dump {
        sink.emit_json("fibration.json", &to_json(&fib.dump(&scales, mode)?))?;
    }
    sink.emit_json("fce_report.json", &json!({ "fibration": kind, "subsets": mode.to_string(), "pass": pass, "scales": reports }))?;
    Ok(verdict("fibred coarse embedding", pass))
}

fn spectral(common: &Common, epsilon: f64) -> Result<bool> {
    let (file, _) = load(common)?;
    let report = expander_scan(&file.chain, epsilon);
    Sink::new(common)?.emit("spectral.csv", &report.to_csv())?;
    Ok(true)
}
