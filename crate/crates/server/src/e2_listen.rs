//! TCP listener that lets external (bring-your-own-device) agents speak
//! E2-lite to the lab's standalone RIC.

use ara_core::e2::{disconnect, encode, error_code, E2Message, FrameBuffer};
use ara_core::lab::Lab;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};

use crate::api::Shared;

pub async fn serve_e2(listener: TcpListener, state: Shared) {
    loop {
        match listener.accept().await {
            Ok((sock, peer)) => {
                tracing::info!(%peer, "e2 agent connected");
                tokio::spawn(handle_agent(sock, state.clone()));
            }
            Err(e) => tracing::warn!("e2 accept failed: {e}"),
        }
    }
}

async fn write_all(sock: &mut TcpStream, msgs: &[E2Message]) -> std::io::Result<()> {
    for m in msgs {
        match encode(m) {
            Ok(bytes) => sock.write_all(&bytes).await?,
            Err(e) => tracing::warn!("dropping unencodable reply: {e}"),
        }
    }
    Ok(())
}

async fn handle_agent(mut sock: TcpStream, state: Shared) {
    let conn = state.with_lab_mut(|lab| Ok(lab.byod_connect())).await.expect("connect never fails");
    let mut fb = FrameBuffer::new();
    let mut buf = vec![0u8; 16 * 1024];
    'outer: loop {
        let n = match sock.read(&mut buf).await {
            Ok(0) | Err(_) => break,
            Ok(n) => n,
        };
        fb.extend(&buf[..n]);
        loop {
            let msg = match fb.next_message() {
                Ok(Some(m)) => m,
                Ok(None) => break,
                Err(e) => {
                    tracing::warn!(?conn, "malformed frame: {e}");
                    let bye = [
                        E2Message::protocol_error(error_code::MALFORMED_FRAME, e.to_string()),
                        E2Message::Disconnect { reason: disconnect::PROTOCOL_VIOLATION },
                    ];
                    let _ = write_all(&mut sock, &bye).await;
                    break 'outer;
                }
            };
            let closing = matches!(msg, E2Message::Disconnect { .. });
            let replies = state
                .with_lab_mut(move |lab: &mut Lab| {
                    let out = lab.byod_message(conn, &msg).map(|(_, out)| out);
                    lab.byod_take_routed();
                    out
                })
                .await;
            match replies {
                Ok(out) => {
                    if write_all(&mut sock, &out).await.is_err() {
                        break 'outer;
                    }
                }
                Err(e) => {
                    tracing::warn!(?conn, "byod message rejected: {e}");
                    break 'outer;
                }
            }
            if closing {
                break 'outer;
            }
        }
    }
    let _ = state.with_lab_mut(move |lab| Ok(lab.byod_drop(conn))).await;
    tracing::info!(?conn, "e2 agent disconnected");
}
