// Regex normalization, HDFS block grouping and the chronological split.

use std::io::Cursor;

use logmlm::ingest::{hdfs_stream, label_counts, normalize_line, read_hdfs_labels, split_train_test, NormalizationRuleSet};

const LOG: &str = "\
081109 203615 148 INFO dfs.DataNode$PacketResponder: PacketResponder 1 for block blk_38865049064139660 terminating
081109 203807 222 INFO dfs.DataNode$PacketResponder: Received block blk_-6952295868487656571 of size 67108864 from /10.251.73.220
081109 204005 35 INFO dfs.FSNamesystem: BLOCK* NameSystem.addStoredBlock: blockMap updated: 10.251.73.220:50010 is added to blk_7128370237687728475
081109 204106 329 INFO dfs.DataNode$PacketResponder: PacketResponder 2 for block blk_-6670958622368987959 terminating
081109 204132 26 INFO dfs.FSNamesystem: BLOCK* NameSystem.delete: blk_-6952295868487656571 is added to invalidSet of 10.251.73.220:50010
";

const LABELS: &str = "\
BlockId,Label
blk_38865049064139660,Normal
blk_-6952295868487656571,Anomaly
blk_7128370237687728475,Normal
blk_-6670958622368987959,Normal
";

fn main() {
    let rules = NormalizationRuleSet::default();
    for raw in ["Receiving block blk_-160899 src: /10.250.19.102:54106", "error code 404 at 2008-11-09"] {
        println!("{raw:?}\n  -> {:?}", normalize_line(raw, &rules));
    }

    let labels = read_hdfs_labels(Cursor::new(LABELS)).unwrap();
    let records: Vec<_> = hdfs_stream(Cursor::new(LOG), labels, &rules).collect();
    for r in &records {
        println!("{:>2} {:<26} {:<8} {}", r.line_no, r.group_id.as_deref().unwrap_or("-"), r.label.to_string(), r.normalized);
    }

    // blocks are split whole; the abnormal block moves to the test side
    let split = split_train_test(records, 0.6).unwrap();
    println!("train {:?}", label_counts(&split.train));
    println!("test  {:?}", label_counts(&split.test));
}
