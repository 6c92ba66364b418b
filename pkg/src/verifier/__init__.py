# Prefix verification: sorted-index binary search and the reference trie
