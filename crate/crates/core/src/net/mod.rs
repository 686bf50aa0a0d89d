//! WebSocket transport for the wire protocol: a stream-layer server per
//! device, a reconnecting client, the action-layer bridge, and a blocking
//! client for behavior trees.

mod bridge;
mod client;
mod device;
mod mirror;
mod remote;
mod server;

pub use bridge::{run_bridge, BridgeHandle};
pub use client::{ClientError, StreamClient};
pub use device::{serve_device, DeviceServeError, DeviceServer};
pub use mirror::mirror_gantry;
pub use remote::RemoteClient;
pub use server::{serve_runtime, spawn_ticker, ServerHandle};

use tokio_tungstenite::tungstenite::Message;

use crate::protocol::{decode_message, encode_message, CodecError, WireMessage};

pub(crate) fn to_frame(msg: &WireMessage) -> Result<Message, CodecError> {
    Ok(Message::text(encode_message(msg)?))
}

/// Decoded payload of one inbound frame; `None` for control frames.
pub(crate) fn from_frame(m: &Message) -> Option<Result<WireMessage, CodecError>> {
    match m {
        Message::Text(t) => Some(decode_message(t.as_bytes())),
        Message::Binary(b) => Some(decode_message(b)),
        _ => None,
    }
}
