//! Shared harness: a loopback server over temp dirs plus ready-made client
//! credentials.

use std::sync::Arc;

use aas_core::chaff::ChaffPolicy;
use aas_core::client::Client;
use aas_core::clock::{Clock, MonotoneClock, SystemClock};
use aas_core::server::{self, ServerConfig, ServerHandle};
use aas_core::wire::{DeclaredStamps, PrincipalTable};

pub const ALICE_PSK: [u8; 32] = [0xA1; 32];
pub const BOB_PSK: [u8; 32] = [0xB2; 32];

pub struct TestServer {
    pub handle: ServerHandle,
    /// Holds the temp storage alive for the server's lifetime.
    #[allow(dead_code)]
    pub dir: tempfile::TempDir,
}

impl TestServer {
    pub fn addr(&self) -> String {
        self.handle.addr().to_string()
    }
}

pub fn principals() -> PrincipalTable {
    let mut table = PrincipalTable::new();
    table.insert("alice", ALICE_PSK);
    table.insert("bob", BOB_PSK);
    table
}

pub fn start_server(policy: ChaffPolicy) -> TestServer {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = ServerConfig {
        listen_addr: "127.0.0.1:0".into(),
        data_dir: dir.path().join("data"),
        ledger_path: dir.path().join("ledger.bin"),
        principals: principals(),
        chaff_policy: policy,
    };
    let clock: Arc<dyn Clock> = Arc::new(MonotoneClock::new(SystemClock));
    let handle = server::spawn(config, clock).expect("server spawn");
    TestServer { handle, dir }
}

pub fn stamps(zone: &str, device: &str) -> DeclaredStamps {
    DeclaredStamps {
        location_zone: zone.into(),
        application: "aas-test/0.1".into(),
        device_id: device.into(),
    }
}

pub fn alice_stamps() -> DeclaredStamps {
    stamps("eu-west-lab", "aa:aa:aa:aa:aa:01")
}

pub fn bob_stamps() -> DeclaredStamps {
    stamps("us-east-lab", "bb:bb:bb:bb:bb:02")
}

pub fn connect_alice(server: &TestServer) -> Client {
    Client::connect(&server.addr(), "alice", &ALICE_PSK, alice_stamps()).expect("alice connects")
}

pub fn connect_bob(server: &TestServer) -> Client {
    Client::connect(&server.addr(), "bob", &BOB_PSK, bob_stamps()).expect("bob connects")
}
