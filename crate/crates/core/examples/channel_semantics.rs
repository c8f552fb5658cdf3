//! Bounded channel semantics: backpressure, peek, and end-of-transaction.
//!
//! cargo run --example channel_semantics

use taskpar::channel::{ChannelState, Token, TryWriteError};

fn main() {
    let mut ch = ChannelState::new(2, 8);

    ch.try_write(Token::Data(10)).unwrap();
    ch.try_write(Token::Data(11)).unwrap();
    match ch.try_write(Token::Data(12)) {
        Err(TryWriteError::Full(t)) => println!("write {t} refused: channel full ({} of {})", ch.len(), ch.capacity()),
        other => unreachable!("{other:?}"),
    }
    match ch.try_write(Token::Data(300)) {
        Err(e) => println!("write 300 refused: {e}"),
        Ok(()) => unreachable!(),
    }

    println!("peek -> {:?} (still {} queued)", ch.try_peek(), ch.len());
    println!("read -> {:?}", ch.try_read());
    ch.close().unwrap();
    println!("contents: {:?}", ch.contents().collect::<Vec<_>>());

    while let Ok(t) = ch.try_read() {
        let eot = if t.is_eot() { " (end of transaction)" } else { "" };
        println!("read -> {t}{eot}");
    }
    println!("stats: {:?}", ch.stats());
}
