//! Client-server protocol: framing codec, server session, simulated AR
//! client and a bandwidth throttle.

pub mod client;
pub mod codec;
pub mod session;
pub mod throttle;

use nalgebra::Point3;

use crate::components::LabeledComponent;
use crate::geometry::{self, CameraFrame, ClassSet, GeometryError, SemanticMesh};
use crate::segmentation::BgraImage;

pub use codec::{decode, encode, CodecError, Decoded, FrameReader, ReadEvent, WireComponent, WireMessage};

pub const DEFAULT_PORT: u16 = 9464;
pub const DEFAULT_QUEUE_BOUND: usize = 64;

/// `ProtocolError` codes sent by the server.
pub mod error_code {
    /// A frame arrived before the mesh.
    pub const MESH_FIRST: u16 = 1;
    /// A second mesh arrived.
    pub const MESH_FIXED: u16 = 2;
    pub const MALFORMED: u16 = 3;
    pub const UNKNOWN_TAG: u16 = 4;
    /// Well-formed message whose content could not be processed.
    pub const REJECTED: u16 = 5;
    /// Message type the server never accepts.
    pub const UNEXPECTED: u16 = 6;
}

pub fn mesh_upload(mesh: &SemanticMesh) -> WireMessage {
    WireMessage::MeshUpload {
        vertices: mesh.vertices().iter().map(|v| [v.x, v.y, v.z]).collect(),
        triangles: mesh.triangles().to_vec(),
    }
}

pub fn frame_capture(frame: &CameraFrame, image: &BgraImage) -> WireMessage {
    WireMessage::FrameCapture {
        frame_index: frame.index(),
        width: frame.width(),
        height: frame.height(),
        pixels: image.data.clone(),
        camera_to_world: geometry::matrix_to_row_major(frame.camera_to_world()),
        projection: geometry::matrix_to_row_major(frame.projection()),
    }
}

/// Camera frame described by a `FrameCapture`'s header fields.
pub fn capture_frame(
    frame_index: u64,
    width: u32,
    height: u32,
    camera_to_world: &[f64; 16],
    projection: &[f64; 16],
) -> Result<CameraFrame, GeometryError> {
    CameraFrame::new(
        width,
        height,
        geometry::matrix_from_row_major(camera_to_world),
        geometry::matrix_from_row_major(projection),
        frame_index,
    )
}

pub fn to_wire(component: &LabeledComponent) -> WireComponent {
    WireComponent {
        class_name: component.class_name.clone(),
        vertices: component.vertices.iter().map(|v| [v.x, v.y, v.z]).collect(),
        triangles: component.triangles.clone(),
    }
}

/// Rebuilds a component received in batch position `id`. Unknown class
/// names map to the `Unknown` index.
pub fn from_wire(id: u32, component: &WireComponent, classes: &ClassSet) -> LabeledComponent {
    let vertices: Vec<Point3<f64>> = component
        .vertices
        .iter()
        .map(|v| Point3::new(v[0], v[1], v[2]))
        .collect();
    LabeledComponent {
        id,
        class_index: classes
            .index_of(&component.class_name)
            .unwrap_or(classes.unknown_index()) as u8,
        class_name: component.class_name.clone(),
        source_vertices: (0..vertices.len() as u32).collect(),
        vertices,
        triangles: component.triangles.clone(),
    }
}
