//! Acceptance gate: one PASS/FAIL line per criterion, each within its time
//! limit. Exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use kmrt_core::analysis::{load_count, clear_count, rotation_chain_depth, rotation_index_set};
use kmrt_core::bench::{
    compare, gen_deep, gen_mlp, gen_mvm, gen_random, gen_rotation_sum, lower, same_slots, synthetic_suite,
    BenchOptions, Program, ReportRow, Strategy,
};
use kmrt_core::interp::{eval, mvm_oracle, profile_levels, Inputs};
use kmrt_core::ir::{parse_module, verify, CryptoParams, Module, OpKind};
use kmrt_core::passes::{
    bootstrap_key_mgmt, bootstrap_removal, bsgs_decompose, lower_linear_transform, merge_rotation_keys, run_pipeline,
    run_pipeline_observed, MergeWindow, PipelineConfig,
};
use kmrt_core::runtime::{
    execute, key_size_bytes, makespan, peak_memory, CostModel, EventKind, ExecTrace, RuntimeConfig, RuntimeError,
};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Distinct-index counts and their resident key memory in GB.
const KEY_TABLE: [(u32, f64); 9] = [
    (27, 3.5),
    (33, 4.3),
    (75, 9.8),
    (117, 15.2),
    (139, 18.1),
    (213, 27.7),
    (267, 34.7),
    (285, 37.1),
    (442, 57.5),
];

fn key_memory_accounting() -> Check {
    let opts = BenchOptions::default();
    let mut worst: f64 = 0.0;
    for (n, gb) in KEY_TABLE {
        let m = gen_rotation_sum(n, 512).map_err(|e| e.to_string())?;
        let (resident, _) = lower(&m, Strategy::Resident, &opts).map_err(|e| e.to_string())?;
        ensure(rotation_index_set(&resident).len() == n as usize, || format!("{n}: wrong index set"))?;
        let x = Inputs::from([("x".to_string(), vec![1; 512])]);
        let (_, trace) = execute(&resident, &x, &RuntimeConfig::low_memory()).map_err(|e| e.to_string())?;
        let peak = peak_memory(&trace).key as f64;
        let rel = (peak - gb * 1e9).abs() / (gb * 1e9);
        worst = worst.max(rel);
        ensure(rel <= 0.01, || format!("{n} keys: {:.3} GB vs {gb} GB", peak / 1e9))?;
    }
    Ok(format!("9 programs, worst deviation {:.2}%", worst * 100.0))
}

fn key_size_scaling() -> Check {
    for depth in [10, 20, 30, 40] {
        let p16 = CryptoParams { ring_dim_log2: 16, mult_depth: depth, ..CryptoParams::default() };
        let p17 = CryptoParams { ring_dim_log2: 17, ..p16.clone() };
        ensure(key_size_bytes(&p17) == 2 * key_size_bytes(&p16), || format!("depth {depth}: ratio is not 2"))?;
    }
    let base = key_size_bytes(&CryptoParams::default());
    ensure(base == 130_000_000, || format!("(16, 30) key is {base} bytes"))?;
    Ok("ratio 2.000 at depths 10..40; 130 MB at (16, 30)".into())
}

fn bsgs_bound() -> Check {
    let mut n16 = 0;
    for log in 2..=10 {
        let n = 1u32 << log;
        let lowered = lower_linear_transform(&gen_mvm(n).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let (m, _) = bsgs_decompose(&lowered);
        verify(&m).map_err(|d| format!("N = {n}: {}", d[0]))?;
        let g = (1..=n).find(|g| g * g >= n).unwrap() as usize;
        let keys = rotation_index_set(&m).len();
        let depth = rotation_chain_depth(m.main().unwrap());
        ensure(keys <= 2 * g, || format!("N = {n}: {keys} keys > 2*{g}"))?;
        ensure(depth <= 2, || format!("N = {n}: chain depth {depth}"))?;
        if n == 16 {
            n16 = keys;
        }
    }
    ensure(n16 == 6, || format!("N = 16 needs {n16} keys"))?;
    Ok("N = 4..1024 within 2*ceil(sqrt N), depth <= 2, N = 16 -> 6 keys".into())
}

/// Rotation executions whose key is not resident, replayed from the trace.
fn unavailable_rotations(t: &ExecTrace) -> usize {
    let mut ready: BTreeMap<u32, u64> = BTreeMap::new();
    let mut bad = 0;
    for e in &t.events {
        match e.kind {
            EventKind::LoadDone => {
                ready.insert(e.index.unwrap(), e.t);
            }
            EventKind::Clear if e.bytes.unwrap_or(0) > 0 => {
                ready.remove(&e.index.unwrap());
            }
            EventKind::OpExec => {
                let rotation = e.op.as_deref().is_some_and(|o| o.starts_with("ckks.rotate") || o.starts_with("ckks.fast_rotate"));
                if let (true, Some(k)) = (rotation, e.index.filter(|&k| k != 0)) {
                    if ready.get(&k).is_none_or(|&r| r > e.start.unwrap()) {
                        bad += 1;
                    }
                }
            }
            _ => {}
        }
    }
    bad
}

struct FuzzStats {
    cases: usize,
    mvm_cases: usize,
    verify_failures: Vec<String>,
    not_loaded: usize,
    unavailable: usize,
}

fn oracle_equivalence(stats: &mut FuzzStats) -> Check {
    let cfg = PipelineConfig::default();
    for seed in 0..1000u64 {
        let case = gen_random(seed);
        stats.cases += 1;
        let want = eval(&case.module, &case.inputs).map_err(|e| format!("seed {seed}: {e}"))?;
        if let Some(w) = &case.mvm {
            let w = &case.module.matrices[w];
            let x = &case.inputs["x"][..w.cols];
            let mut expect = mvm_oracle(w, x).map_err(|e| e.to_string())?;
            expect.resize(case.module.params.slots as usize, 0);
            ensure(want[0].slots() == Some(&expect[..]), || format!("seed {seed}: interpreter disagrees with W*v"))?;
            stats.mvm_cases += 1;
        }
        let mut verify_failures = Vec::new();
        let compiled = run_pipeline_observed(&case.module, &cfg, |pass, m| {
            if let Err(d) = verify(m) {
                verify_failures.push(format!("seed {seed} after {pass}: {}", d[0]));
            }
        })
        .map_err(|e| format!("seed {seed}: {e}"))?
        .module;
        stats.verify_failures.extend(verify_failures);
        for rc in [RuntimeConfig::low_memory(), RuntimeConfig::balanced(Some(3)), RuntimeConfig::balanced(None)] {
            match execute(&compiled, &case.inputs, &rc) {
                Ok((got, trace)) => {
                    ensure(same_slots(&got, &want), || format!("seed {seed} ({:?}): outputs differ", rc.mode))?;
                    stats.unavailable += unavailable_rotations(&trace);
                }
                Err(RuntimeError::KeyNotLoaded { .. }) => stats.not_loaded += 1,
                Err(e) => return Err(format!("seed {seed}: {e}")),
            }
        }
    }
    ensure(stats.not_loaded == 0, || format!("{} key-not-loaded aborts", stats.not_loaded))?;
    Ok(format!("{} programs ({} single transforms) x 3 runtime configs", stats.cases, stats.mvm_cases))
}

fn liveness_soundness(stats: &FuzzStats) -> Check {
    ensure(stats.cases == 1000, || format!("only {} programs ran", stats.cases))?;
    ensure(stats.verify_failures.is_empty(), || stats.verify_failures[0].clone())?;
    ensure(stats.not_loaded == 0, || format!("{} key-not-loaded aborts", stats.not_loaded))?;
    ensure(stats.unavailable == 0, || format!("{} rotations ran without a resident key", stats.unavailable))?;
    Ok("verify after every pass; every rotation found its key resident".into())
}

fn row<'a>(rows: &'a [ReportRow], program: &str, s: Strategy) -> Result<&'a ReportRow, String> {
    rows.iter().find(|r| r.program == program && r.strategy == s.name()).ok_or_else(|| format!("{program}/{s}: no row"))
}

fn memory_suite() -> Vec<Program> {
    vec![
        Program::new("mvm64", gen_mvm(64).unwrap()),
        Program::new("mlp_16_16_16", gen_mlp(&[16, 16, 16], 64).unwrap()),
        Program::new("mlp_64_64_64", gen_mlp(&[64, 64, 64], 64).unwrap()),
        Program::new("mlp_64_32_10", gen_mlp(&[64, 32, 10], 64).unwrap()),
        Program::new("deep10", gen_deep(10, true, None).unwrap()),
        Program::new("deep24", gen_deep(24, true, None).unwrap()),
        Program::new("deep40", gen_deep(40, true, None).unwrap()),
    ]
}

fn memory_dominance() -> Check {
    let strategies = [Strategy::Resident, Strategy::KeymemLow];
    let cmp = compare(&memory_suite(), &strategies, &BenchOptions::default());
    ensure(cmp.failures.is_empty(), || format!("{:?}", cmp.failures[0]))?;
    for p in memory_suite() {
        let res = row(&cmp.rows, &p.name, Strategy::Resident)?;
        let low = row(&cmp.rows, &p.name, Strategy::KeymemLow)?;
        ensure(low.peak_key_bytes <= res.peak_key_bytes, || format!("{}: low {} > resident {}", p.name, low.peak_key_bytes, res.peak_key_bytes))?;
    }
    let res = row(&cmp.rows, "mvm64", Strategy::Resident)?;
    let low = row(&cmp.rows, "mvm64", Strategy::KeymemLow)?;
    let ratio = res.peak_key_bytes as f64 / low.peak_key_bytes as f64;
    ensure(ratio >= 1.5, || format!("mvm64 ratio {ratio:.2} < 1.5"))?;
    Ok(format!("7 programs; mvm64 resident/low = {ratio:.2}x ({} vs {} keys)", res.key_count, low.peak_key_bytes / key_size_bytes(&CryptoParams::default())))
}

/// Canonical amounts of every rotation in `m`, with repetition.
fn emitted(m: &Module) -> Vec<u32> {
    let mut out = Vec::new();
    m.main().unwrap().walk(&mut |op| {
        if let Some(k) = op.kind.rotation_index().and_then(|e| e.as_const()) {
            if k != 0 {
                out.push(k as u32);
            }
        }
    });
    out
}

fn time_dominance() -> Check {
    let programs: Vec<Program> = synthetic_suite()
        .into_iter()
        .chain(memory_suite())
        .chain([27, 75, 139].map(|n| Program::new(format!("rotsum{n}"), gen_rotation_sum(n, 512).unwrap())))
        .collect();
    let opts = BenchOptions::default();
    let cmp = compare(&programs, &Strategy::ALL, &opts);
    ensure(cmp.failures.is_empty(), || format!("{:?}", cmp.failures[0]))?;
    let mut strict = 0;
    for p in &programs {
        let front = run_pipeline(&p.module, &PipelineConfig::frontend(opts.bsgs, opts.remove_bootstraps))
            .map_err(|e| e.to_string())?
            .module;
        let ks = emitted(&front);
        let low = row(&cmp.rows, &p.name, Strategy::KeymemLow)?;
        let bal = row(&cmp.rows, &p.name, Strategy::ALL[3])?;
        let pow2 = row(&cmp.rows, &p.name, Strategy::Pow2)?;
        if ks.iter().any(|k| !k.is_power_of_two()) {
            strict += 1;
            ensure(low.makespan < pow2.makespan, || format!("{}: low {} >= pow2 {}", p.name, low.makespan, pow2.makespan))?;
        }
        ensure(bal.makespan <= low.makespan, || format!("{}: balanced {} > low {}", p.name, bal.makespan, low.makespan))?;
        let extra: u64 = ks.iter().map(|k| u64::from(k.count_ones() - 1)).sum();
        ensure(pow2.chain_ops == extra, || format!("{}: pow2 added {} rotations, expected {extra}", p.name, pow2.chain_ops))?;
    }
    Ok(format!("{} programs, {strict} with non-power-of-two indices", programs.len()))
}

fn bootstrap_passes() -> Check {
    // block 2 starts at level 26; a bootstrap there can only lower it
    let m = gen_deep(12, true, Some(2)).map_err(|e| e.to_string())?;
    let x = Inputs::from([("x".to_string(), (0..64).map(|i| i % 5 - 2).collect())]);
    let prof = profile_levels(&m, &x).map_err(|e| e.to_string())?;
    let useless: Vec<_> = prof
        .bootstraps()
        .filter(|r| r.in_levels.iter().zip(&r.out_levels).all(|(i, o)| i >= o))
        .map(|r| r.path.clone())
        .collect();
    ensure(useless.len() == 1, || format!("fixture has {} useless bootstraps", useless.len()))?;
    ensure(prof.bootstraps().count() >= 2, || "fixture needs a useful bootstrap too".into())?;
    let r = bootstrap_removal(&m, &prof, &x).map_err(|e| e.to_string())?;
    ensure(r.removed == useless, || format!("removed {:?}, expected {useless:?}", r.removed))?;
    let before = eval(&m, &x).map_err(|e| e.to_string())?;
    let after = eval(&r.module, &x).map_err(|e| e.to_string())?;
    ensure(same_slots(&before, &after), || "outputs changed".into())?;

    let span = |remove: bool| -> Result<u64, String> {
        let c = run_pipeline(&m, &PipelineConfig::keymem(true, remove)).map_err(|e| e.to_string())?.module;
        let (out, t) = execute(&c, &x, &RuntimeConfig::low_memory()).map_err(|e| e.to_string())?;
        ensure(same_slots(&out, &before), || "compiled outputs changed".into())?;
        Ok(makespan(&t))
    };
    let (kept, removed) = (span(false)?, span(true)?);
    let cost = CostModel::default().bootstrap;
    ensure(removed + cost <= kept, || format!("makespan {kept} -> {removed}, saving below {cost}"))?;

    let two = parse_module("params { slots = 16 }\nfunc @main(%v: ct) -> ct {\n  %a = ckks.bootstrap %v\n  %b = ckks.bootstrap %a\n  return %b\n}")
        .map_err(|e| e.to_string())?;
    let managed = bootstrap_key_mgmt(&two);
    let (merged, _) = merge_rotation_keys(&managed, &MergeWindow::default(), &CostModel::default());
    let (l0, l1) = (load_count(managed.main().unwrap()), load_count(merged.main().unwrap()));
    ensure(l0 == 2 * l1, || format!("loads {l0} -> {l1}"))?;
    let mut per_index: BTreeMap<u32, usize> = BTreeMap::new();
    merged.main().unwrap().walk(&mut |op| {
        if let OpKind::LoadKey { index } = op.kind {
            *per_index.entry(index).or_default() += 1;
        }
    });
    ensure(per_index.values().all(|&c| c == 1), || "an index is loaded twice".into())?;
    verify(&merged).map_err(|d| d[0].to_string())?;
    Ok(format!("removed 1 of {} bootstraps, makespan {kept} -> {removed}; bootstrap loads {l0} -> {l1}", prof.bootstraps().count()))
}

fn merge_golden() -> Check {
    let src = "params { slots = 16 }
func @main(%v: ct) -> ct {
  %a = ckks.rotate %v {index = 4}
  %b = ckks.add %a, %a
  %c = ckks.rotate %b {index = 4}
  return %c
}";
    let m = parse_module(src).map_err(|e| e.to_string())?;
    let out = run_pipeline(&m, &PipelineConfig::default()).map_err(|e| e.to_string())?.module;
    let f = out.main().unwrap();
    let (loads, clears) = (load_count(f), clear_count(f));
    ensure((loads, clears) == (1, 1), || format!("{loads} loads, {clears} clears"))?;
    Ok("1 load, 1 clear".into())
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |id: u32, name: &str, limit: Duration, f: &mut dyn FnMut() -> Check| {
        let start = Instant::now();
        let result = f();
        let took = start.elapsed();
        let verdict = match result {
            Ok(detail) if took <= limit => ("PASS", detail),
            Ok(detail) => ("FAIL", format!("{detail}; took longer than {limit:?}")),
            Err(e) => ("FAIL", e),
        };
        if verdict.0 == "FAIL" {
            failed += 1;
        }
        println!("{} [{id}] {name} ({:.2}s): {}", verdict.0, took.as_secs_f64(), verdict.1);
    };
    report(1, "key-memory accounting", Duration::from_secs(5), &mut key_memory_accounting);
    report(2, "key-size scaling", Duration::from_secs(1), &mut key_size_scaling);
    report(3, "BSGS key bound", Duration::from_secs(5), &mut bsgs_bound);
    let mut stats = FuzzStats { cases: 0, mvm_cases: 0, verify_failures: Vec::new(), not_loaded: 0, unavailable: 0 };
    let fuzz_start = Instant::now();
    report(4, "oracle equivalence", Duration::from_secs(60), &mut || oracle_equivalence(&mut stats));
    let fuzz_time = fuzz_start.elapsed();
    // runs inside criterion 4's budget
    report(5, "liveness soundness", Duration::from_secs(60).saturating_sub(fuzz_time), &mut || liveness_soundness(&stats));
    report(6, "memory dominance", Duration::from_secs(10), &mut memory_dominance);
    report(7, "time dominance", Duration::from_secs(10), &mut time_dominance);
    report(8, "bootstrap passes", Duration::from_secs(5), &mut bootstrap_passes);
    report(9, "merge golden", Duration::from_secs(1), &mut merge_golden);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
