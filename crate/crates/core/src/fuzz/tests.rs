use super::*;
use crate::ir::{parse_module, BlockId, Program};
use crate::synth::{synthesize_driver, SynthOptions};

use proptest::prelude::*;

fn build(src: &str, entry: &str, opts: &SynthOptions) -> (Program, Machine, DriverTarget) {
    let p = parse_module(src).unwrap();
    let (q, spec) = synthesize_driver(&p, entry, opts).unwrap();
    let m = Machine::with_alloc_size(&q, opts.alloc_size).unwrap();
    let target = DriverTarget {
        name: spec.driver.clone(),
        dictionary: spec.dictionary(),
    };
    (q, m, target)
}

const LIB: &str = "func boom(%x: i32) -> void {\nentry:\n  trap\n}\n\
    func mix(%a: i32, %b: i32) -> i32 {\nentry:\n  %s = add i32 %a, %b\n  %t = xor i32 %s, 7\n  ret %t\n}\n\
    func call_back(%cb: fn(i32) -> i32, %x: i32) -> i32 {\nentry:\n  %r = call %cb(%x)\n  ret %r\n}\n\
    func guard(%x: i32) -> i32 {\nentry:\n  %c = cmp eq i32 %x, 42\n  br %c, hit, miss\nhit:\n  ret 1\nmiss:\n  ret 0\n}";

#[test]
fn smoke_classification() {
    let o = SynthOptions::default();
    let (_, m, t) = build(LIB, "boom", &o);
    assert_eq!(
        smoke_filter(&m, &t.name, 1, 0, DEFAULT_STEP_LIMIT).unwrap(),
        SmokeVerdict::Invalid {
            kind: CrashKind::Trap,
            input: vec![]
        }
    );
    let (_, m, t) = build(LIB, "mix", &o);
    assert!(smoke_filter(&m, &t.name, 256, 3, DEFAULT_STEP_LIMIT).unwrap().is_valid());
    let (_, m, t) = build(LIB, "call_back", &o);
    assert!(matches!(
        smoke_filter(&m, &t.name, 8, 1, DEFAULT_STEP_LIMIT).unwrap(),
        SmokeVerdict::Invalid {
            kind: CrashKind::InvalidDriver,
            ..
        }
    ));
}

#[test]
fn hangs_do_not_invalidate() {
    let src = "func spin(%x: i8) -> void {\nentry:\n  jmp loop\nloop:\n  jmp loop\n}";
    let (_, m, t) = build(src, "spin", &SynthOptions::default());
    assert!(smoke_filter(&m, &t.name, 4, 1, 1000).unwrap().is_valid());
}

#[test]
fn straight_line_single_path() {
    let (q, m, t) = build(LIB, "mix", &SynthOptions::default());
    let cfg = CampaignConfig {
        budget: Budget::Execs(100),
        ..Default::default()
    };
    let out = run_campaign(&m, &q.identity(), &[t.clone()], &cfg).unwrap();
    let expected: BTreeSet<BlockId> = [q.block_id("mix", "entry").unwrap(), q.block_id(&t.name, "entry").unwrap()]
        .into_iter()
        .collect();
    assert_eq!(out.report.total.blocks, expected);
    assert_eq!(out.report.total.path_count, 1);
    assert_eq!(out.report.total.executions, 100);
}

#[test]
fn guard_with_harvesting() {
    let (q, m, t) = build(LIB, "guard", &SynthOptions::default());
    let cfg = CampaignConfig {
        budget: Budget::Execs(5000),
        seed: 7,
        ..Default::default()
    };
    let out = run_campaign(&m, &q.identity(), &[t], &cfg).unwrap();
    assert!(out.report.total.blocks.contains(&q.block_id("guard", "hit").unwrap()));
    assert!(out.report.total.path_count >= 2);
}

#[test]
fn zero_budget_and_no_drivers() {
    let (q, m, t) = build(LIB, "mix", &SynthOptions::default());
    let cfg = CampaignConfig {
        budget: Budget::Execs(0),
        ..Default::default()
    };
    let out = run_campaign(&m, &q.identity(), &[t], &cfg).unwrap();
    assert_eq!(out.report.total.executions, 0);
    assert_eq!(out.report.total.block_count, 0);
    assert!(matches!(run_campaign(&m, "x", &[], &cfg), Err(FuzzError::NoDrivers)));
}

#[test]
fn deterministic_and_sharded() {
    let (q, m, t) = build(LIB, "guard", &SynthOptions::default());
    let cfg = CampaignConfig {
        budget: Budget::Execs(777),
        seed: 3,
        trace_every_exec: true,
        ..Default::default()
    };
    let a = run_campaign(&m, &q.identity(), &[t.clone()], &cfg).unwrap();
    let b = run_campaign(&m, &q.identity(), &[t.clone()], &cfg).unwrap();
    assert_eq!(a.report.to_json(), b.report.to_json());
    for s in &a.shards {
        assert_eq!(s.progress.len(), 777);
        assert!(s.progress.windows(2).all(|w| w[0].blocks <= w[1].blocks && w[0].paths <= w[1].paths));
    }

    let par = CampaignConfig { workers: 3, ..cfg };
    let c = run_campaign(&m, &q.identity(), &[t.clone()], &par).unwrap();
    let d = run_campaign(&m, &q.identity(), &[t], &par).unwrap();
    assert_eq!(c.report.total.executions, 777);
    assert_eq!(c.report.total.shards.len(), 3);
    assert_eq!(c.report.to_json(), d.report.to_json());
    assert_eq!(merge_reports(&c.report, &c.report).unwrap(), c.report);
}

#[test]
fn corpus_replays_its_admission_signature() {
    let (q, m, t) = build(LIB, "guard", &SynthOptions::default());
    let cfg = CampaignConfig {
        budget: Budget::Execs(300),
        seed: 11,
        ..Default::default()
    };
    let out = run_campaign(&m, &q.identity(), &[t.clone()], &cfg).unwrap();
    let corpus = &out.shards[0].corpus;
    assert!(!corpus.is_empty());
    for e in corpus.entries() {
        let r = m.execute(&t.name, &e.data, &ExecLimits::default()).unwrap();
        assert_eq!(r.path_hash, e.path_hash);
    }
}

#[test]
fn crashes_are_recorded_and_replay() {
    let src = "func oob(%n: i8) -> void {\nentry:\n  %p = alloc 4\n  %c = cmp ugt i8 %n, 200\n  br %c, bad, ok\nbad:\n  %q = gep i8, %p, index 4\n  store i8 1, %q\n  jmp ok\nok:\n  free %p\n  ret\n}";
    let (q, m, t) = build(src, "oob", &SynthOptions::default());
    let cfg = CampaignConfig {
        budget: Budget::Execs(2000),
        seed: 1,
        ..Default::default()
    };
    let out = run_campaign(&m, &q.identity(), &[t.clone()], &cfg).unwrap();
    let bugs: Vec<_> = out.report.bugs().collect();
    assert_eq!(bugs.len(), 1);
    assert_eq!(bugs[0].kind, CrashKind::OutOfBounds);
    let r = m.execute(&t.name, &bugs[0].input, &ExecLimits::default()).unwrap();
    assert_eq!(r.status.crash_kind(), Some(CrashKind::OutOfBounds));
}

fn arb_coverage() -> impl Strategy<Value = Coverage> {
    (
        prop::collection::btree_set(0u32..40, 0..10),
        prop::collection::btree_set(0u64..40, 0..10),
        prop::collection::vec((0u32..6, prop::collection::vec(any::<u8>(), 0..4), 0usize..2), 0..4),
        prop::collection::btree_map("[a-c]", 0u64..50, 0..3),
    )
        .prop_map(|(blocks, paths, crashes, shards)| {
            let mut c = Coverage {
                blocks: blocks.into_iter().map(BlockId).collect(),
                paths,
                shards,
                ..Default::default()
            };
            for (b, input, k) in crashes {
                c.add_crash(CrashRecord {
                    kind: [CrashKind::OutOfBounds, CrashKind::Trap][k],
                    block: BlockId(b),
                    driver: "d".into(),
                    input,
                });
            }
            c.refresh();
            c
        })
}

fn arb_report() -> impl Strategy<Value = CoverageReport> {
    prop::collection::btree_map("[xy]", arb_coverage(), 0..3).prop_map(|drivers| {
        let mut r = CoverageReport::empty("p");
        for (d, c) in drivers {
            r.absorb(&d, &c);
        }
        r
    })
}

proptest! {
    #[test]
    fn merge_is_a_commutative_idempotent_monoid(a in arb_report(), b in arb_report(), c in arb_report()) {
        let ab = merge_reports(&a, &b).unwrap();
        prop_assert_eq!(&ab, &merge_reports(&b, &a).unwrap());
        prop_assert_eq!(
            merge_reports(&ab, &c).unwrap(),
            merge_reports(&a, &merge_reports(&b, &c).unwrap()).unwrap()
        );
        prop_assert_eq!(&merge_reports(&a, &a).unwrap(), &a);
        prop_assert_eq!(&merge_reports(&a, &CoverageReport::empty("p")).unwrap(), &a);
        prop_assert_eq!(ab.total.block_count, ab.total.blocks.len());
    }
}
