def heuristic(bids):
  threshold = 0.5
  a1 = sigmoid(10 * (bids[0] - threshold))
  a2 = sigmoid(10 * (bids[1] - threshold))
  return [a1, a2, 1 - max(a1, a2)]
