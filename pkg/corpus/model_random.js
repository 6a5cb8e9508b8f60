var handlers = {};
handlers.small = function onSmall() { return "s"; };
handlers.big = function onBig() { return "b"; };
var r = Math.random();
var key;
if (r < 0.5) { key = "small"; } else { key = "big"; }
handlers[key]();
