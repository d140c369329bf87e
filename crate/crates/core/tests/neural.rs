use kgmem::kg::{
    build_graph_view, ContextMode, EntityId, GraphEdge, GraphView, MemoryItem, RelationId, Source,
    Triple, Vocab,
};
use kgmem::neural::{
    encode, q_values_global, q_values_local, Checkpoint, EncoderConfig, EncoderKind, HeadMode,
    ParameterSet,
};
use kgmem::oracle::{check_gradients, tiny_instance};
use kgmem::{seed, Error};
use rand::Rng as _;

const ENTITIES: usize = 9;
const RELATIONS: usize = 5;

fn params(kind: EncoderKind, seed: u64) -> ParameterSet {
    ParameterSet::init(EncoderConfig::new(kind), ENTITIES, RELATIONS, seed).unwrap()
}

fn item(h: u32, r: u32, t: u32, added: u32) -> MemoryItem {
    MemoryItem::fresh(Triple::new(EntityId(h), RelationId(r), EntityId(t)), added)
}

fn sample_items() -> Vec<MemoryItem> {
    vec![
        item(0, 0, 3, 4),
        item(3, 1, 4, 2),
        item(4, 3, 1, 6),
        item(5, 0, 4, 1),
        item(3, 2, 6, 6),
    ]
}

fn graph(items: &[MemoryItem]) -> GraphView {
    build_graph_view(items, &[], ContextMode::StmOnly, 8, 100)
}

#[test]
fn zero_layers_return_input_embeddings() {
    for kind in EncoderKind::ALL {
        let mut cfg = EncoderConfig::new(kind);
        cfg.layers = 0;
        let p = ParameterSet::init(cfg, ENTITIES, RELATIONS, 3).unwrap();
        let g = graph(&sample_items());
        let enc = encode(&g, &p).unwrap();
        let table = p.block("entity_embeddings").unwrap();
        for (i, node) in g.nodes.iter().enumerate() {
            let start = table.start + node.index() * cfg.dim;
            assert_eq!(enc.row(i), &p.values()[start..start + cfg.dim]);
        }
    }
}

#[test]
fn lone_node_uses_only_the_self_path() {
    for kind in EncoderKind::ALL {
        let p = params(kind, 1);
        let g = GraphView {
            nodes: vec![EntityId(4)],
            edges: vec![],
        };
        let enc = encode(&g, &p).unwrap();
        // Independent recomputation: relu(W h + b) twice, with no messages.
        let d = p.config().dim;
        let table = p.block("entity_embeddings").unwrap();
        let mut h = p.values()[table.start + 4 * d..table.start + 5 * d].to_vec();
        for l in 0..2 {
            let w = &p.values()[p.block(&format!("layer{l}.weight")).unwrap()];
            let b = &p.values()[p.block(&format!("layer{l}.bias")).unwrap()];
            h = (0..d)
                .map(|r| {
                    let s: f64 = (0..d).map(|c| w[r * d + c] * h[c]).sum::<f64>() + b[r];
                    s.max(0.0)
                })
                .collect();
        }
        for (a, b) in enc.row(0).iter().zip(&h) {
            assert!((a - b).abs() < 1e-12, "{kind}");
        }
    }
}

#[test]
fn edge_order_does_not_matter() {
    for kind in EncoderKind::ALL {
        let p = params(kind, 2);
        let items = sample_items();
        let mut reversed = items.clone();
        reversed.reverse();
        let a = encode(&graph(&items), &p).unwrap();
        let b = encode(&graph(&reversed), &p).unwrap();
        for (x, y) in a.embeddings().iter().zip(b.embeddings()) {
            assert!((x - y).abs() < 1e-9, "{kind}");
        }
    }
}

#[test]
fn local_rows_follow_the_shape_contract() {
    for kind in EncoderKind::ALL {
        let p = params(kind, 4);
        let items = sample_items();
        let g = graph(&items);
        for n in 0..=items.len() {
            assert_eq!(q_values_local(&g, &items[..n], &p).unwrap().rows().len(), n);
        }
        let mut dup = items.clone();
        dup.push(items[1]);
        let q = q_values_local(&g, &dup, &p).unwrap();
        assert_eq!(q.rows()[1], q.rows()[items.len()]);
    }
}

#[test]
fn global_head_pools_items() {
    for kind in EncoderKind::ALL {
        let p = params(kind, 5);
        let items = sample_items();
        let g = graph(&items);
        let local = q_values_local(&g, &items, &p).unwrap();
        let one = q_values_global(&g, &items[..1], &p).unwrap();
        assert_eq!(one.rows(), &local.rows()[..1]);
        let same = q_values_global(&g, &[items[2]; 3], &p).unwrap();
        for (a, b) in same.rows()[0].iter().zip(&local.rows()[2]) {
            assert!((a - b).abs() < 1e-12);
        }
        let mut shuffled = items.clone();
        shuffled.rotate_left(2);
        let a = q_values_global(&g, &items, &p).unwrap();
        let b = q_values_global(&g, &shuffled, &p).unwrap();
        for (x, y) in a.rows()[0].iter().zip(&b.rows()[0]) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(a.rows().len(), 1);
        assert!(matches!(q_values_global(&g, &[], &p), Err(Error::Usage(_))));
    }
}

#[test]
fn outputs_are_deterministic() {
    for kind in EncoderKind::ALL {
        let p = params(kind, 6);
        let items = sample_items();
        let g = graph(&items);
        let a = q_values_local(&g, &items, &p).unwrap();
        let b = q_values_local(&g, &items, &p.clone()).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn bad_inputs_are_rejected() {
    let p = params(EncoderKind::Gcn, 0);
    let items = sample_items();
    let g = graph(&items);
    let stranger = item(7, 0, 8, 0);
    assert!(matches!(q_values_local(&g, &[stranger], &p), Err(Error::Usage(_))));
    let big = graph(&[item(40, 0, 3, 0)]);
    assert!(matches!(encode(&big, &p), Err(Error::Vocabulary(_))));
    let bad_rel = graph(&[item(1, 9, 3, 0)]);
    assert!(matches!(encode(&bad_rel, &p), Err(Error::Vocabulary(_))));
    let dangling = GraphView {
        nodes: vec![EntityId(1)],
        edges: vec![GraphEdge {
            triple: Triple::new(EntityId(1), RelationId(0), EntityId(2)),
            features: [0.0; 3],
            source: Source::ShortTerm,
        }],
    };
    assert!(matches!(encode(&dangling, &p), Err(Error::Usage(_))));
}

#[test]
fn zero_output_gradient_gives_zero_parameter_gradient() {
    for kind in EncoderKind::ALL {
        for mode in [HeadMode::Local, HeadMode::Global] {
            let p = params(kind, 7);
            let items = sample_items();
            let q = kgmem::neural::q_values(&graph(&items), &items, &p, mode).unwrap();
            let mut grad = p.zeros_like();
            q.backward(&p, &vec![[0.0; 2]; q.rows().len()], &mut grad);
            assert!(grad.iter().all(|&g| g == 0.0));
        }
    }
}

#[test]
fn entities_outside_the_graph_get_no_gradient() {
    for kind in EncoderKind::ALL {
        let p = params(kind, 8);
        let items = sample_items();
        let g = graph(&items);
        let q = q_values_local(&g, &items, &p).unwrap();
        let mut grad = p.zeros_like();
        q.backward(&p, &vec![[1.0, -0.5]; items.len()], &mut grad);
        let table = p.block("entity_embeddings").unwrap();
        let d = p.config().dim;
        for e in 0..ENTITIES {
            let row = &grad[table.start + e * d..table.start + (e + 1) * d];
            if !g.nodes.contains(&EntityId(e as u32)) {
                assert!(row.iter().all(|&x| x == 0.0), "{kind} entity {e}");
            }
        }
        // The last relation transform feeds nothing downstream.
        let last = p.block("layer1.relation_weight").unwrap();
        assert!(grad[last].iter().all(|&x| x == 0.0));
    }
}

#[test]
fn relabeling_entities_permutes_outputs() {
    let perm: Vec<u32> = vec![8, 2, 5, 0, 7, 1, 3, 6, 4];
    for kind in EncoderKind::ALL {
        let p = params(kind, 9);
        let d = p.config().dim;
        let table = p.block("entity_embeddings").unwrap();
        let mut q = p.clone();
        for (e, &to) in perm.iter().enumerate() {
            let src = table.start + e * d;
            let dst = table.start + to as usize * d;
            let row = p.values()[src..src + d].to_vec();
            q.values_mut()[dst..dst + d].copy_from_slice(&row);
        }
        let items = sample_items();
        let moved: Vec<MemoryItem> = items
            .iter()
            .map(|m| {
                let mut m = *m;
                m.triple.head = EntityId(perm[m.triple.head.index()]);
                m.triple.tail = EntityId(perm[m.triple.tail.index()]);
                m
            })
            .collect();
        let a = q_values_local(&graph(&items), &items, &p).unwrap();
        let b = q_values_local(&graph(&moved), &moved, &q).unwrap();
        for (x, y) in a.rows().iter().zip(b.rows()) {
            assert!((x[0] - y[0]).abs() < 1e-12 && (x[1] - y[1]).abs() < 1e-12);
        }
        let ea = encode(&graph(&items), &p).unwrap();
        let eb = encode(&graph(&moved), &q).unwrap();
        for (i, node) in ea.nodes.iter().enumerate() {
            let other = eb.embedding(EntityId(perm[node.index()])).unwrap();
            for (x, y) in ea.row(i).iter().zip(other) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn analytic_gradients_match_finite_differences() {
    for kind in EncoderKind::ALL {
        for mode in [HeadMode::Local, HeadMode::Global] {
            let mut checked = 0;
            let mut s = 0u64;
            while checked < 2 {
                s += 1;
                let mut rng = seed::stream(s, &[seed::tag("gradcheck")]);
                let inst = tiny_instance(&mut rng, ENTITIES, RELATIONS, 6);
                assert!(inst.graph.nodes.len() <= 6);
                let p = params(kind, s);
                let rows = match mode {
                    HeadMode::Local => inst.items.len(),
                    HeadMode::Global => 1,
                };
                let targets: Vec<[f64; 2]> = (0..rows)
                    .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
                    .collect();
                let report = check_gradients(&p, &inst, mode, &targets, 1e-5).unwrap();
                // A finite-difference step can cross a ReLU kink only when
                // some pre-activation sits within about one step of zero.
                if report.kink_margin < 1e-5 {
                    continue;
                }
                assert!(
                    report.max_relative_error < 1e-4,
                    "{kind} {mode:?} seed {s}: {report:?}"
                );
                checked += 1;
            }
        }
    }
}

#[test]
fn parameter_counts_follow_the_layout() {
    let d = 16;
    let head = 16 * 2 * d + 16 + 2 * 16 + 2;
    let rel = RELATIONS * d;
    let ent = ENTITIES * d;
    let per_layer_common = d * d + d + d * d + d;
    assert_eq!(params(EncoderKind::Gcn, 0).len(), ent + rel + 2 * per_layer_common + head);
    assert_eq!(
        params(EncoderKind::StareLite, 0).len(),
        ent + rel + 2 * (per_layer_common + 3 * d) + head
    );
    assert_eq!(
        params(EncoderKind::Rgcn, 0).len(),
        ent + rel + 2 * (per_layer_common + 20 * d * d + 2 * RELATIONS * 20) + head
    );
    let p = params(EncoderKind::Gcn, 0);
    let bound = 1.0 / 4.0;
    assert!(p.values().iter().all(|v| v.abs() <= bound));
    assert!(p.values()[p.block("layer0.bias").unwrap()].iter().all(|&v| v == 0.0));
}

#[test]
fn checkpoints_round_trip_and_reject_mismatches() {
    let vocab = Vocab::new();
    for kind in EncoderKind::ALL {
        let p = ParameterSet::for_vocab(EncoderConfig::new(kind), &vocab, 11).unwrap();
        let text = serde_json::to_string(&Checkpoint::new(&p, &vocab)).unwrap();
        let back: Checkpoint = serde_json::from_str(&text).unwrap();
        assert_eq!(back.into_params(&vocab).unwrap(), p);

        let mut other = vocab.clone();
        other.entity("kitchen").unwrap();
        let back: Checkpoint = serde_json::from_str(&text).unwrap();
        assert!(matches!(back.into_params(&other), Err(Error::Vocabulary(_))));

        let mut wrong: Checkpoint = serde_json::from_str(&text).unwrap();
        wrong.blocks[0].shape[1] = 8;
        assert!(matches!(wrong.into_params(&vocab), Err(Error::Checkpoint(_))));
        let mut short: Checkpoint = serde_json::from_str(&text).unwrap();
        short.values.pop();
        assert!(matches!(short.into_params(&vocab), Err(Error::Checkpoint(_))));
    }
}
