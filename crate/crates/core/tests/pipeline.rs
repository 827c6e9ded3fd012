use std::collections::BTreeSet;

use kmrt_core::analysis::{count_ops, load_count, rotation_chain_depth, rotation_index_set};
use kmrt_core::bench::{gen_mvm, gen_random, same_slots};
use kmrt_core::interp::{eval, mvm_oracle, Inputs};
use kmrt_core::ir::{parse_module, print_module, verify, OpKind};
use kmrt_core::passes::{bsgs_decompose, lower_linear_transform, run_pipeline, run_pipeline_observed, PipelineConfig};
use kmrt_core::runtime::{execute, key_size_bytes, peak_memory, RuntimeConfig};

fn ramp(n: u32) -> Inputs {
    Inputs::from([("v".to_string(), (0..i64::from(n)).map(|i| i % 7 - 3).collect())])
}

#[test]
fn mvm16_end_to_end() {
    let m = gen_mvm(16).unwrap();
    let out = run_pipeline(&m, &PipelineConfig::default()).unwrap().module;
    verify(&out).unwrap();
    let f = out.main().unwrap();
    assert!(!f.has_loops());
    assert_eq!(rotation_index_set(&out).len(), 6);
    assert_eq!(load_count(f), 6);
    assert_eq!(count_ops(f, |k| matches!(k, OpKind::PrefetchKey { .. })), 6);
    let x = ramp(16);
    let want = mvm_oracle(&m.matrices["W"], &x["v"]).unwrap();
    for cfg in [RuntimeConfig::low_memory(), RuntimeConfig::balanced(Some(2))] {
        let (got, _) = execute(&out, &x, &cfg).unwrap();
        assert_eq!(got[0].slots().unwrap(), want);
    }
    // three baby-step keys stay live across giant steps, plus one giant key
    let (_, trace) = execute(&out, &x, &RuntimeConfig::low_memory()).unwrap();
    assert_eq!(peak_memory(&trace).key, 4 * key_size_bytes(&out.params));
}

#[test]
fn without_bsgs_every_diagonal_needs_a_key() {
    let m = gen_mvm(16).unwrap();
    let out = run_pipeline(&m, &PipelineConfig::keymem(false, true)).unwrap().module;
    assert_eq!(rotation_index_set(&out), (1..16).collect::<BTreeSet<u32>>());
}

#[test]
fn bsgs_key_bound() {
    for log in 2..=10 {
        let n = 1u32 << log;
        let (m, _) = bsgs_decompose(&lower_linear_transform(&gen_mvm(n).unwrap()).unwrap());
        let g = (f64::from(n).sqrt().ceil()) as usize;
        let keys = rotation_index_set(&m).len();
        assert!(keys <= 2 * g, "N = {n}: {keys} keys");
        assert!(rotation_chain_depth(m.main().unwrap()) <= 2);
        if n == 16 {
            assert_eq!(keys, 6);
        }
    }
}

#[test]
fn empty_program_is_unchanged() {
    let m = parse_module("params { slots = 8 }\nfunc @main(%v: ct) -> ct {\n  return %v\n}").unwrap();
    let out = run_pipeline(&m, &PipelineConfig::default()).unwrap().module;
    assert_eq!(print_module(&out), print_module(&m));
}

#[test]
fn fuzzed_programs_survive_every_pass() {
    for seed in 0..60 {
        let case = gen_random(seed);
        let want = eval(&case.module, &case.inputs).unwrap();
        let out = run_pipeline_observed(&case.module, &PipelineConfig::default(), |pass, m| {
            assert!(verify(m).is_ok(), "seed {seed}: verification failed after {pass}");
            let got = eval(m, &case.inputs).unwrap();
            assert!(same_slots(&got, &want), "seed {seed}: {pass} changed the result");
        })
        .unwrap()
        .module;
        for cfg in [RuntimeConfig::low_memory(), RuntimeConfig::balanced(Some(3))] {
            let (got, _) = execute(&out, &case.inputs, &cfg).unwrap();
            assert!(same_slots(&got, &want), "seed {seed}");
        }
    }
}
