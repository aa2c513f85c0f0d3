#![allow(dead_code)]

use proptest::prelude::*;
use semfuse::protocol::{WireComponent, WireMessage};

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6..1e6f64, Just(0.0), Just(-0.0), Just(f64::MIN_POSITIVE)]
}

fn point() -> impl Strategy<Value = [f64; 3]> {
    [finite(), finite(), finite()]
}

fn name() -> impl Strategy<Value = String> {
    prop_oneof![Just("Lamp".to_string()), Just("Chair".to_string()), "[a-zA-Zé ]{0,12}"]
}

fn component() -> impl Strategy<Value = WireComponent> {
    (
        name(),
        prop::collection::vec(point(), 0..8),
        prop::collection::vec([0u32..8, 0u32..8, 0u32..8], 0..6),
    )
        .prop_map(|(class_name, vertices, triangles)| WireComponent {
            class_name,
            vertices,
            triangles,
        })
}

pub fn wire_message() -> impl Strategy<Value = WireMessage> {
    prop_oneof![
        (
            prop::collection::vec(point(), 0..10),
            prop::collection::vec([any::<u32>(), any::<u32>(), any::<u32>()], 0..10)
        )
            .prop_map(|(vertices, triangles)| WireMessage::MeshUpload { vertices, triangles }),
        (
            any::<u64>(),
            0u32..6,
            0u32..6,
            prop::collection::vec(finite(), 16),
            prop::collection::vec(finite(), 16)
        )
            .prop_flat_map(|(frame_index, width, height, c2w, proj)| {
                prop::collection::vec(any::<u8>(), (width * height * 4) as usize).prop_map(move |pixels| {
                    WireMessage::FrameCapture {
                        frame_index,
                        width,
                        height,
                        pixels,
                        camera_to_world: c2w.clone().try_into().unwrap(),
                        projection: proj.clone().try_into().unwrap(),
                    }
                })
            }),
        (any::<u32>(), prop::collection::vec(component(), 0..4))
            .prop_map(|(batch_id, components)| WireMessage::ComponentBatch { batch_id, components }),
        (point(), name()).prop_map(|(point, class_name)| WireMessage::Selection { point, class_name }),
        any::<u32>().prop_map(|ref_id| WireMessage::Ack { ref_id }),
        (any::<u16>(), name()).prop_map(|(code, text)| WireMessage::ProtocolError { code, text }),
    ]
}
