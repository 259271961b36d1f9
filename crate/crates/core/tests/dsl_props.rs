use std::collections::BTreeMap;

use ntp_core::dsl::{
    parse_topology_bytes, ElementClass, MarkerKind, MarkerPosition, RawElement, RawGroup, RawInput, RawMarker,
};
use ntp_core::{parse_topology, serialize_topology, validate, Axis, RawTopologyDoc};
use proptest::prelude::*;

fn ident() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_]{0,8}"
}

fn attr_map(reserved: &'static [&'static str]) -> impl Strategy<Value = BTreeMap<String, String>> {
    prop::collection::btree_map("[a-z][a-z_]{0,6}", "\\PC{0,12}", 0..4)
        .prop_map(move |m| m.into_iter().filter(|(k, _)| !reserved.contains(&k.as_str())).collect())
}

fn raw_input() -> impl Strategy<Value = RawInput> {
    (
        ident(),
        prop::collection::vec("[TBFCHWN]:[1-9][0-9]{0,2}", 1..4),
        prop::option::of(prop_oneof![Just("fp32"), Just("fp16"), Just("int8")]),
        attr_map(&["id", "shape", "precision"]),
    )
        .prop_map(|(id, shape, precision, extra)| RawInput {
            id,
            shape,
            precision: precision.map(str::to_owned),
            extra,
        })
}

fn raw_element() -> impl Strategy<Value = RawElement> {
    (
        ident(),
        any::<bool>(),
        "[a-z_]{1,10}",
        attr_map(&["id", "type", "input"]),
        prop::collection::vec(ident(), 0..3),
    )
        .prop_map(|(id, layer, kind, attrs, inputs)| RawElement {
            id,
            class: if layer { ElementClass::Layer } else { ElementClass::Inlay },
            kind,
            attrs,
            inputs,
        })
}

fn raw_marker() -> impl Strategy<Value = RawMarker> {
    (any::<bool>(), any::<bool>(), ident()).prop_map(|(start, before, anchor)| RawMarker {
        kind: if start { MarkerKind::Start } else { MarkerKind::End },
        anchor,
        position: if before { MarkerPosition::Before } else { MarkerPosition::After },
    })
}

fn raw_doc() -> impl Strategy<Value = RawTopologyDoc> {
    (
        "\\PC{1,16}",
        prop::collection::vec(raw_input(), 0..3),
        prop::collection::vec(raw_element(), 0..6),
        prop::collection::vec(raw_marker(), 0..3),
        prop::collection::vec(
            (ident(), prop::collection::vec(ident(), 1..4)).prop_map(|(name, members)| RawGroup { name, members }),
            0..3,
        ),
    )
        .prop_map(|(name, inputs, elements, markers, groups)| RawTopologyDoc {
            name,
            inputs,
            elements,
            markers,
            groups,
        })
}

/// A valid chain of FC / LSTM / Bi-LSTM layers over a `T,B,F` input.
fn chain() -> impl Strategy<Value = (String, Vec<(u8, usize)>)> {
    prop::collection::vec((0u8..3, 1usize..64), 1..6).prop_map(|layers| {
        let mut xml = String::from("<topology name=\"chain\">\n<input id=\"x\" shape=\"T:3,B:2,F:7\"/>\n");
        let mut prev = "x".to_owned();
        for (i, (kind, width)) in layers.iter().enumerate() {
            let ty = ["fc", "lstm", "bilstm"][*kind as usize];
            xml.push_str(&format!("<layer id=\"l{i}\" type=\"{ty}\" nodes=\"{width}\" input=\"{prev}\"/>\n"));
            prev = format!("l{i}");
        }
        xml.push_str("</topology>");
        (xml, layers)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn serialize_then_parse_is_identity(doc in raw_doc()) {
        let text = serialize_topology(&doc);
        let back = parse_topology(&text).unwrap();
        prop_assert_eq!(back, doc);
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        if let Ok(doc) = parse_topology_bytes(&bytes) {
            let _ = validate(&doc);
        }
    }

    #[test]
    fn mutated_fixture_never_panics(pos in 0usize..2000, byte in any::<u8>(), cut in 0usize..2000) {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/topologies/speech-frontend.xml");
        let mut bytes = std::fs::read(path).unwrap();
        let p = pos % bytes.len();
        bytes[p] = byte;
        bytes.truncate(cut.max(1).min(bytes.len()));
        if let Ok(doc) = parse_topology_bytes(&bytes) {
            let _ = validate(&doc);
        }
    }

    #[test]
    fn random_documents_validate_or_error(doc in raw_doc()) {
        let _ = validate(&doc);
    }

    #[test]
    fn chain_shapes_follow_widths((xml, layers) in chain()) {
        let g = validate(&parse_topology(&xml).unwrap()).unwrap();
        prop_assert_eq!(g.nodes.len(), layers.len());
        for (node, (kind, width)) in g.nodes.iter().zip(&layers) {
            let expect = if *kind == 2 { 2 * width } else { *width };
            prop_assert_eq!(node.out_shape.extent(Axis::F), Some(expect));
            prop_assert_eq!(node.out_shape.extent(Axis::T), Some(3));
            prop_assert_eq!(node.out_shape.extent(Axis::B), Some(2));
        }
    }
}
