def heuristic(others_bids):
  return 0.5 * min(others_bids)
