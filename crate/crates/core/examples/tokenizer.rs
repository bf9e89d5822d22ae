// Train a WordPiece vocabulary and look at how lines segment.

use logmlm::tokenizer::{decode, encode, train_wordpiece, WordPieceConfig};

fn main() {
    let corpus = [
        "receiving block BLK src IP dest IP",
        "received block BLK of size NUM from IP",
        "packetresponder NUM for block BLK terminating",
        "deleting block BLK file PATH",
        "verification succeeded for BLK",
        "receiving block BLK src IP dest IP",
    ];
    let vocab = train_wordpiece(corpus, WordPieceConfig { vocab_size: 80, min_frequency: 2 }).unwrap();
    println!("{} tokens, hash {}", vocab.len(), hex_prefix(&vocab.hash()));
    println!("{}", vocab.tokens()[5..].join(" "));

    for line in ["received block BLK terminating", "receiver blocked", "zzz unknown"] {
        let enc = encode(line, &vocab, 16);
        let pieces: Vec<&str> = enc.sequence.ids.iter().map(|&id| vocab.token(id).unwrap()).collect();
        println!("{line:<32} {pieces:?} -> {:?}", decode(&enc.sequence, &vocab).unwrap());
    }

    // truncation keeps the first max_seq_len - 2 pieces
    let enc = encode(corpus[1], &vocab, 6);
    println!("truncated: {} ({} content tokens)", enc.truncated, enc.sequence.s_len);
}

fn hex_prefix(bytes: &[u8]) -> String {
    bytes[..6].iter().map(|b| format!("{b:02x}")).collect()
}
