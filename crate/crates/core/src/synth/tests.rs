use super::*;
use crate::ir::{parse_module, render_module, validate, Inst};
use crate::runtime::{execute, Event, ExecLimits, ValueSource};

fn synth(src: &str, entry: &str) -> (Program, DriverSpec) {
    let p = parse_module(src).unwrap();
    synthesize_driver(&p, entry, &SynthOptions::default()).unwrap()
}

fn run(p: &Program, driver: &str, input: &[u8]) -> crate::runtime::ExecResult {
    execute(p, driver, input, &ExecLimits { record: true, ..Default::default() }).unwrap()
}

fn calls<'a>(r: &'a crate::runtime::ExecResult, f: &str) -> Vec<&'a [u64]> {
    r.events
        .iter()
        .filter_map(|e| match e {
            Event::Call { function, args } if function == f => Some(args.as_slice()),
            _ => None,
        })
        .collect()
}

#[test]
fn scalar_driver_shape() {
    let (q, spec) = synth("func g(%x: i32) -> void { entry: ret }", "g");
    assert_eq!(spec.driver, "__driver_g");
    let text = render_module(&q);
    let reparsed = parse_module(&text).unwrap();
    assert_eq!(reparsed, q);
    let d = q.function("__driver_g").unwrap();
    assert_eq!(d.params.len(), 2);
    assert_eq!(d.ret, TypeDesc::i32());
    let insts: Vec<&Inst> = d.insts().collect();
    assert!(matches!(insts[0], Inst::Input { ty, .. } if *ty == TypeDesc::i32()));
    assert!(matches!(insts[1], Inst::Call { .. }));
    assert!(matches!(insts[2], Inst::LeakGuard));
    assert!(matches!(insts[3], Inst::Ret { .. }));

    let r = run(&q, "__driver_g", &[1, 0, 0, 0]);
    assert!(r.is_ok());
    assert_eq!(calls(&r, "g"), vec![&[1u64][..]]);
    assert_eq!(r.consumed, 4);
}

#[test]
fn errors() {
    let p = parse_module("declare ext() -> void\nfunc f() -> void { entry: ret }").unwrap();
    let o = SynthOptions::default();
    assert_eq!(synthesize_driver(&p, "nope", &o).unwrap_err(), SynthError::UnknownEntry("nope".into()));
    assert_eq!(synthesize_driver(&p, "ext", &o).unwrap_err(), SynthError::ExternalEntry("ext".into()));
    assert_eq!(
        synthesize_composite_driver(&p, &["f"], &o).unwrap_err(),
        SynthError::CompositeTooShort(1)
    );
    let (q, _) = synthesize_driver(&p, "f", &o).unwrap();
    assert!(matches!(synthesize_driver(&q, "f", &o), Err(SynthError::DriverExists(_))));
}

const GUARD: &str = "func sink(%x: i32) -> void { entry: ret }\n\
    func g(%x: i32) -> void {\nentry:\n  %c = cmp eq i32 %x, 42\n  br %c, hit, miss\nhit:\n  call @sink(%x)\n  ret\nmiss:\n  ret\n}";

#[test]
fn decision_bit_selects_constant() {
    let (q, spec) = synth(GUARD, "g");
    assert_eq!(spec.entries[0].args[0].candidates()[0].value, 42);
    let hit = q.block_id("g", "hit").unwrap();

    let r = run(&q, "__driver_g", &[1]);
    assert!(r.blocks.contains(&hit));
    assert_eq!(r.consumed, 1);
    assert_eq!(calls(&r, "g"), vec![&[42u64][..]]);

    let r = run(&q, "__driver_g", &[0, 7, 0, 0, 0]);
    assert!(!r.blocks.contains(&hit));
    assert_eq!(calls(&r, "g"), vec![&[7u64][..]]);
    assert_eq!(r.consumed, 5);

    let p = parse_module(GUARD).unwrap();
    let off = SynthOptions {
        harvest: false,
        ..Default::default()
    };
    let (q, spec) = synthesize_driver(&p, "g", &off).unwrap();
    assert!(spec.dictionary().is_empty());
    assert!(!run(&q, "__driver_g", &[1]).blocks.contains(&q.block_id("g", "hit").unwrap()));
}

#[test]
fn pointer_site_constant_is_stored() {
    let src = "type H = { i32, i32 }\n\
        func sink(%x: i32) -> void { entry: ret }\n\
        func check(%h: ptr<H>) -> void {\nentry:\n  %m = gep H, %h, field 0\n  %v = load i32, %m\n  %c = cmp eq i32 %v, 0xDEADBEEF\n  br %c, magic_ok, bad\nmagic_ok:\n  %f = gep H, %h, field 1\n  %w = load i32, %f\n  call @sink(%w)\n  ret\nbad:\n  ret\n}";
    let (q, spec) = synth(src, "check");
    assert_eq!(spec.dictionary(), vec![(0xDEAD_BEEF, 4)]);
    let ok = q.block_id("check", "magic_ok").unwrap();
    // Decision bit set: the magic is stored, the next field is lazy.
    let r = run(&q, "__driver_check", &[1, 9, 0, 0, 0]);
    assert!(r.blocks.contains(&ok), "{r:?}");
    assert_eq!(calls(&r, "sink"), vec![&[9u64][..]]);
    assert_eq!(r.shadow_violations, 0);
    // Decision bit clear: the magic comes from the input like anything else.
    let r = run(&q, "__driver_check", &[0, 0xEF, 0xBE, 0xAD, 0xDE, 3, 0, 0, 0]);
    assert!(r.blocks.contains(&ok));
    assert_eq!(calls(&r, "sink"), vec![&[3u64][..]]);
    let r = run(&q, "__driver_check", &[0, 1, 2, 3, 4]);
    assert!(!r.blocks.contains(&ok));
}

#[test]
fn composite_shares_the_cursor() {
    let src = "func a(%x: i32) -> void { entry: ret }\nfunc b(%y: i16, %z: i8) -> void { entry: ret }";
    let p = parse_module(src).unwrap();
    let (q, spec) = synthesize_composite_driver(&p, &["a", "b"], &SynthOptions::default()).unwrap();
    assert_eq!(spec.driver, "__driver_a__b");
    let r = run(&q, &spec.driver, &[1, 0, 0, 0, 2, 0, 3]);
    assert_eq!(calls(&r, "a"), vec![&[1u64][..]]);
    assert_eq!(calls(&r, "b"), vec![&[2u64, 3][..]]);
    let cursors: Vec<usize> = r
        .events
        .iter()
        .filter_map(|e| match e {
            Event::Scalar {
                source: ValueSource::Driver,
                cursor,
                ..
            } => Some(*cursor),
            _ => None,
        })
        .collect();
    assert_eq!(cursors, vec![0, 4, 6]);
    let order: Vec<&str> = q
        .function(&spec.driver)
        .unwrap()
        .insts()
        .filter_map(|i| match i {
            Inst::Call {
                callee: crate::ir::Callee::Direct(n),
                ..
            } => Some(n.as_str()),
            _ => None,
        })
        .collect();
    assert_eq!(order, vec!["a", "b"]);
}

#[test]
fn aggregate_and_funcref_arguments() {
    let src = "func sink(%x: i64) -> void { entry: ret }\n\
        func f(%s: { i8, ptr<i64> }) -> void {\nentry:\n  %q = gep { i8, ptr<i64> }, %s, field 1\n  %p = load ptr<i64>, %q\n  %v = load i64, %p\n  call @sink(%v)\n  ret\n}\n\
        func cb(%c: fn(i32) -> i32) -> void {\nentry:\n  %r = call %c(1)\n  ret\n}";
    let (q, _) = synth(src, "f");
    let r = run(&q, "__driver_f", &[5, 7, 0, 0, 0, 0, 0, 0, 0]);
    assert!(r.is_ok(), "{:?}", r.status);
    assert_eq!(calls(&r, "sink"), vec![&[7u64][..]]);
    assert_eq!(r.shadow_violations, 0);

    let (q, spec) = synth(src, "cb");
    assert_eq!(spec.entries[0].args[0], ArgPlan::FuncRefTrap);
    let r = run(&q, "__driver_cb", &[]);
    assert_eq!(r.status.crash_kind(), Some(crate::runtime::CrashKind::InvalidDriver));
}

#[test]
fn leak_guard_frees_entry_leaks() {
    let src = "func one() -> void {\nentry:\n  %a = alloc 8\n  ret\n}\n\
        func three() -> void {\nentry:\n  %a = alloc 8\n  %b = alloc 8\n  %c = alloc 8\n  free %b\n  ret\n}\n\
        func tidy() -> void {\nentry:\n  %a = alloc 8\n  free %a\n  ret\n}";
    for (entry, before) in [("one", 1), ("three", 2), ("tidy", 0)] {
        let (q, spec) = synth(src, entry);
        let r = run(&q, &spec.driver, &[]);
        assert!(r.is_ok());
        assert_eq!(r.leaks_before_epilogue, Some(before), "{entry}");
        assert_eq!(r.live_after, 0);
    }
}

#[test]
fn hook_counts_match_accesses() {
    let src = "declare memcpy(ptr, ptr, i64) -> ptr memory\n\
        func leaf(%p: ptr<i32>) -> void {\nentry:\n  %v = load i32, %p\n  store i32 %v, %p\n  ret\n}\n\
        func top(%p: ptr<i32>, %q: ptr) -> void {\nentry:\n  call @leaf(%p)\n  %r = call @memcpy(%q, %p, 4)\n  %w = load i32, %p\n  ret\n}\n\
        func unrelated(%p: ptr<i32>) -> void {\nentry:\n  %v = load i32, %p\n  ret\n}";
    let (q, _) = synth(src, "top");
    validate(&q).unwrap();
    let set = reachable(&q, &["__driver_top"]);
    assert!(!set.contains("unrelated"));
    let (mut loads, mut lh, mut stores, mut sh) = (0, 0, 0, 0);
    for f in q.functions.iter().filter(|f| set.contains(&f.name)) {
        for i in f.insts() {
            match i {
                Inst::Load { .. } => loads += 1,
                Inst::LoadHook { .. } => lh += 1,
                Inst::Store { .. } => stores += 1,
                Inst::StoreHook { .. } => sh += 1,
                _ => {}
            }
        }
    }
    assert_eq!((loads, stores), (2, 1));
    assert_eq!((lh, sh), (loads, stores));
    assert_eq!(instrument_lazy_store(&q, &["__driver_top"]), q);
}

#[test]
fn deterministic_output() {
    let (a, sa) = synth(GUARD, "g");
    let (b, sb) = synth(GUARD, "g");
    assert_eq!(render_module(&a), render_module(&b));
    assert_eq!(sa, sb);
}

#[test]
fn pseudo_source() {
    let src = "type H = { i32, i32 }\nfunc f(%n: i32, %h: ptr<H>) -> void { entry: ret }\nfunc g() -> void { entry: ret }";
    let p = parse_module(src).unwrap();
    let (q, spec) = synthesize_driver(&p, "f", &SynthOptions::default()).unwrap();
    let text = emit_pseudo_source(&spec, &q);
    assert!(text.contains("int32_t n = consume_32(&in);"), "{text}");
    let alloc = text.find("lazy_alloc(64)").unwrap();
    assert!(alloc < text.find("f(n, h);").unwrap());

    let (q, spec) = synthesize_composite_driver(&p, &["g", "f"], &SynthOptions::default()).unwrap();
    let text = emit_pseudo_source(&spec, &q);
    assert!(text.find("g();").unwrap() < text.find("f(e1_n, e1_h);").unwrap());
}

#[test]
fn dictionary_recovered_from_program() {
    let (q, spec) = synth(GUARD, "g");
    assert_eq!(driver_entries(&q, &spec.driver), vec!["g"]);
    assert_eq!(driver_dictionary(&q, &spec.driver), spec.dictionary());
    assert_eq!(spec.dictionary(), vec![(42, 4)]);
}
