//! Walks the dog through a few commands and shows how posture, busy time
//! and performability gate each one.

use std::sync::Arc;

use tactile_dog::actions::{ActionTable, Dispatch};
use tactile_dog::taxonomy::Taxonomy;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tax = Arc::new(Taxonomy::load_default());
    let table = ActionTable::load_default(tax);
    let mut state = table.initial_state();
    println!("start: {:?}", state.posture);
    for name in ["give_paw", "sit", "give_paw", "lick", "stand"] {
        match table.dispatch_named(&state, name)? {
            Dispatch::Command(cmd) => {
                println!(
                    "{name}: {} ticks, ends {:?}, motors {:?}",
                    cmd.duration_ticks, cmd.resulting_posture, cmd.motor_params
                );
                state = state.begin(&cmd, &table);
                if name == "sit" {
                    // issued before the sit finishes
                    if let Dispatch::Rejected(r) = table.dispatch_named(&state, "nod")? {
                        println!("  nod while still sitting down: {}", r.reason.code());
                    }
                }
                state = state.step(cmd.duration_ticks);
            }
            Dispatch::Rejected(r) => println!("{name}: rejected ({})", r.reason.code()),
        }
    }
    println!("end: {:?}", state.posture);
    Ok(())
}
