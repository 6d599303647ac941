//! Node port: accepts shim connections and hands registered ones to the
//! event loop.

use std::net::{TcpListener, TcpStream};
use std::sync::mpsc::Sender;
use std::sync::Arc;
use std::thread;

use inboxdbg::transport::{accept_node, Registry, TcpTransport};

use crate::server::Input;

pub fn spawn_acceptor(listener: TcpListener, tx: Sender<Input>) {
    let registry = Arc::new(Registry::new());
    thread::spawn(move || {
        for stream in listener.incoming() {
            match stream {
                Ok(stream) => {
                    let (tx, registry) = (tx.clone(), registry.clone());
                    thread::spawn(move || register(stream, &registry, tx));
                }
                Err(e) => log::warn!("node port: {e}"),
            }
        }
    });
}

fn register(stream: TcpStream, registry: &Registry, tx: Sender<Input>) {
    let peer = stream
        .peer_addr()
        .map(|a| a.to_string())
        .unwrap_or_else(|_| "?".into());
    let transport = match TcpTransport::new(stream) {
        Ok(t) => t,
        Err(e) => return log::warn!("{peer}: {e}"),
    };
    match accept_node(transport, registry) {
        Ok((name, link)) => {
            log::info!("{peer} registered as {name}");
            let _ = tx.send(Input::Node { name, link });
        }
        Err(e) => log::warn!("{peer}: registration rejected: {e}"),
    }
}
